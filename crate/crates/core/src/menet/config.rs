use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::me::MEModuleConfig;
use crate::tensor::CombineMode;

/// Which stage-2 modules use a dense (ungrouped) first pointwise convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensePointwise {
    /// Only the module that reads the stem output.
    #[default]
    FirstModule,
    /// Every stage-2 module.
    WholeStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MENetConfig {
    /// Output channels of stage 2 (`w`).
    pub residual_width: usize,
    /// Fusion branch channels of stage 2 (`k`).
    pub fusion_width: usize,
    /// Fusion width ratio between consecutive stages (`α`).
    pub expansion: f64,
    pub groups: usize,
    /// Modules per stage, the first of each being the downsampling one.
    pub stage_repeats: Vec<usize>,
    pub num_classes: usize,
    pub input_size: usize,
    pub input_channels: usize,
    pub stem_channels: usize,
    /// 3×3 stride-2 max pool after the stem convolution.
    pub stem_pool: bool,
    pub combine_mode: CombineMode,
    pub dense_pointwise: DensePointwise,
}

impl Default for MENetConfig {
    fn default() -> Self {
        MENetConfig {
            residual_width: 228,
            fusion_width: 12,
            expansion: 1.0,
            groups: 3,
            stage_repeats: vec![4, 8, 4],
            num_classes: 1000,
            input_size: 224,
            input_channels: 3,
            stem_channels: 24,
            stem_pool: true,
            combine_mode: CombineMode::Product,
            dense_pointwise: DensePointwise::FirstModule,
        }
    }
}

impl MENetConfig {
    pub fn new(residual_width: usize, fusion_width: usize, expansion: f64, groups: usize) -> Self {
        MENetConfig {
            residual_width,
            fusion_width,
            expansion,
            groups,
            ..Self::default()
        }
    }

    pub fn from_notation(notation: &str, groups: usize) -> Result<Self> {
        let n = parse_notation(notation)?;
        Ok(Self::new(n.residual_width, n.fusion_width, n.expansion, groups))
    }

    pub fn notation(&self) -> String {
        format_notation(self.residual_width, self.fusion_width, self.expansion)
    }

    /// Output widths `w · 2^(i−2)` for stages 2, 3, ...
    pub fn stage_widths(&self) -> Vec<usize> {
        (0..self.stage_repeats.len())
            .map(|s| self.residual_width << s)
            .collect()
    }

    /// Fusion widths `round(α^(i−2) · k)`, at least 1.
    pub fn fusion_widths(&self) -> Vec<usize> {
        (0..self.stage_repeats.len())
            .map(|s| ((self.expansion.powi(s as i32) * self.fusion_width as f64).round() as usize).max(1))
            .collect()
    }

    /// Per-module configs as `(stage index from 0, position in stage, config)`.
    pub fn module_configs(&self) -> Result<Vec<(usize, usize, MEModuleConfig)>> {
        self.check_scalars()?;
        let mut out = Vec::new();
        let mut in_ch = self.stem_channels;
        for (stage, ((&repeats, width), fusion)) in self
            .stage_repeats
            .iter()
            .zip(self.stage_widths())
            .zip(self.fusion_widths())
            .enumerate()
        {
            for idx in 0..repeats {
                let dense = stage == 0
                    && match self.dense_pointwise {
                        DensePointwise::FirstModule => idx == 0,
                        DensePointwise::WholeStage => true,
                    };
                let cfg = MEModuleConfig::new(in_ch, width, fusion, self.groups, idx == 0, !dense, self.combine_mode);
                cfg.validate().map_err(|e| Error::InNetwork {
                    stage: stage + 2,
                    index: idx,
                    source: Box::new(e),
                })?;
                out.push((stage, idx, cfg));
                in_ch = width;
            }
        }
        Ok(out)
    }

    fn check_scalars(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.residual_width == 0 || self.fusion_width == 0 || self.groups == 0 {
            return bad("residual_width, fusion_width and groups must be positive".into());
        }
        if !(self.expansion.is_finite() && self.expansion >= 1.0) {
            return bad(format!("expansion {} must be a finite value >= 1", self.expansion));
        }
        if self.stage_repeats.is_empty() || self.stage_repeats.contains(&0) {
            return bad(format!(
                "stage_repeats {:?} must be non-empty and positive",
                self.stage_repeats
            ));
        }
        if self.num_classes == 0 || self.input_size == 0 || self.input_channels == 0 || self.stem_channels == 0 {
            return bad("num_classes, input_size, input_channels and stem_channels must be positive".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.module_configs().map(|_| ())
    }
}

/// The `(w, k, α)` triple of a `w-MENet-k×α` model name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Notation {
    pub residual_width: usize,
    pub fusion_width: usize,
    pub expansion: f64,
}

/// Parses `<int>-MENet-<int>(x|×)<number>`. Errors carry the character
/// position at which parsing stopped.
pub fn parse_notation(s: &str) -> Result<Notation> {
    let chars: Vec<char> = s.chars().collect();
    let mut pos = 0;
    let err = |position: usize, message: &str| Error::Notation {
        position,
        message: message.to_string(),
    };

    let digits = |pos: &mut usize| -> String {
        let start = *pos;
        while *pos < chars.len() && chars[*pos].is_ascii_digit() {
            *pos += 1;
        }
        chars[start..*pos].iter().collect()
    };

    let w = digits(&mut pos);
    if w.is_empty() {
        return Err(err(pos, "expected residual width"));
    }
    const INFIX: &str = "-MENet-";
    for expected in INFIX.chars() {
        if chars.get(pos) != Some(&expected) {
            return Err(err(pos, "expected `-MENet-`"));
        }
        pos += 1;
    }
    let k = digits(&mut pos);
    if k.is_empty() {
        return Err(err(pos, "expected fusion width"));
    }
    match chars.get(pos) {
        Some('x') | Some('×') => pos += 1,
        _ => return Err(err(pos, "expected `x` or `×`")),
    }
    let alpha_start = pos;
    let mut alpha = digits(&mut pos);
    if alpha.is_empty() {
        return Err(err(pos, "expected expansion factor"));
    }
    if chars.get(pos) == Some(&'.') {
        pos += 1;
        let frac = digits(&mut pos);
        if frac.is_empty() {
            return Err(err(pos, "expected digits after `.`"));
        }
        alpha = format!("{alpha}.{frac}");
    }
    if pos != chars.len() {
        return Err(err(pos, "unexpected trailing characters"));
    }
    let parse_int = |text: &str, at: usize| text.parse::<usize>().map_err(|_| err(at, "integer out of range"));
    Ok(Notation {
        residual_width: parse_int(&w, 0)?,
        fusion_width: parse_int(&k, w.chars().count() + INFIX.len())?,
        expansion: alpha.parse::<f64>().map_err(|_| err(alpha_start, "invalid number"))?,
    })
}

pub fn format_notation(residual_width: usize, fusion_width: usize, expansion: f64) -> String {
    format!("{residual_width}-MENet-{fusion_width}×{expansion}")
}
