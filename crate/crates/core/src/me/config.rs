use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::CombineMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MEModuleConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub bottleneck_channels: usize,
    pub fusion_channels: usize,
    pub groups: usize,
    pub downsample: bool,
    pub first_pointwise_grouped: bool,
    pub combine_mode: CombineMode,
}

impl MEModuleConfig {
    /// Config with the bottleneck set to a quarter of the output width.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        fusion_channels: usize,
        groups: usize,
        downsample: bool,
        first_pointwise_grouped: bool,
        combine_mode: CombineMode,
    ) -> Self {
        MEModuleConfig {
            in_channels,
            out_channels,
            bottleneck_channels: out_channels / 4,
            fusion_channels,
            groups,
            downsample,
            first_pointwise_grouped,
            combine_mode,
        }
    }

    pub fn standard(channels: usize, fusion_channels: usize, groups: usize) -> Self {
        Self::new(
            channels,
            channels,
            fusion_channels,
            groups,
            false,
            true,
            CombineMode::Product,
        )
    }

    pub fn downsampling(in_channels: usize, out_channels: usize, fusion_channels: usize, groups: usize) -> Self {
        Self::new(
            in_channels,
            out_channels,
            fusion_channels,
            groups,
            true,
            true,
            CombineMode::Product,
        )
    }

    pub fn with_combine(mut self, mode: CombineMode) -> Self {
        self.combine_mode = mode;
        self
    }

    pub fn with_first_pointwise_grouped(mut self, grouped: bool) -> Self {
        self.first_pointwise_grouped = grouped;
        self
    }

    /// Output channels of the second pointwise convolution.
    pub fn residual_channels(&self) -> usize {
        if self.downsample {
            self.out_channels.saturating_sub(self.in_channels)
        } else {
            self.out_channels
        }
    }

    pub fn first_pointwise_groups(&self) -> usize {
        if self.first_pointwise_grouped {
            self.groups
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |rule: &'static str, detail: String| Err(Error::InvalidModule { rule, detail });
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return fail("positive widths", format!("{self:?}"));
        }
        if self.out_channels % 4 != 0 || self.bottleneck_channels != self.out_channels / 4 {
            return fail(
                "bottleneck == out/4",
                format!(
                    "bottleneck {} for {} outputs",
                    self.bottleneck_channels, self.out_channels
                ),
            );
        }
        if self.bottleneck_channels % self.groups != 0 {
            return fail(
                "bottleneck % groups == 0",
                format!("{} % {}", self.bottleneck_channels, self.groups),
            );
        }
        if self.first_pointwise_grouped && self.in_channels % self.groups != 0 {
            return fail(
                "in % groups == 0 for grouped first pointwise",
                format!("{} % {}", self.in_channels, self.groups),
            );
        }
        if self.downsample {
            if self.out_channels <= self.in_channels {
                return fail(
                    "downsample => out > in",
                    format!("out {} <= in {}", self.out_channels, self.in_channels),
                );
            }
        } else if self.out_channels != self.in_channels {
            return fail(
                "standard => out == in",
                format!("out {} != in {}", self.out_channels, self.in_channels),
            );
        }
        if self.residual_channels() % self.groups != 0 {
            return fail(
                "residual % groups == 0",
                format!("{} % {}", self.residual_channels(), self.groups),
            );
        }
        if self.fusion_channels == 0 || self.fusion_channels > self.bottleneck_channels {
            return fail(
                "1 <= fusion <= bottleneck",
                format!(
                    "fusion {} for bottleneck {}",
                    self.fusion_channels, self.bottleneck_channels
                ),
            );
        }
        Ok(())
    }
}
