use std::fmt;

use crate::error::{Error, Result};
use crate::layers::{shuffle_permutation, Conv2d, ConvSpec};
use crate::me::{EvolutionOp, FusionHook, MEModule, MergingOp};
use crate::tensor::Tensor;

/// Boolean `out × in` matrix: entry `(o, i)` is true iff output channel `o`
/// structurally depends on input channel `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyPattern {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl DependencyPattern {
    pub fn empty(rows: usize, cols: usize) -> Self {
        DependencyPattern {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        DependencyPattern {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut p = Self::empty(n, n);
        (0..n).for_each(|i| p.set(i, i));
        p
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, out: usize, inp: usize) -> bool {
        self.bits[out * self.cols + inp]
    }

    pub fn set(&mut self, out: usize, inp: usize) {
        self.bits[out * self.cols + inp] = true;
    }

    /// Pattern of `next ∘ self`.
    pub fn then(&self, next: &DependencyPattern) -> Result<DependencyPattern> {
        if next.cols != self.rows {
            return Err(Error::InvalidShape(format!(
                "cannot compose {}x{} after {}x{}",
                next.rows, next.cols, self.rows, self.cols
            )));
        }
        let mut out = Self::empty(next.rows, self.cols);
        for o in 0..next.rows {
            for m in (0..next.cols).filter(|&m| next.get(o, m)) {
                for i in (0..self.cols).filter(|&i| self.get(m, i)) {
                    out.set(o, i);
                }
            }
        }
        Ok(out)
    }

    pub fn union(&self, other: &DependencyPattern) -> Result<DependencyPattern> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::InvalidShape("union of differently sized patterns".into()));
        }
        Ok(DependencyPattern {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// Rows of `self` followed by rows of `below`.
    pub fn stack(&self, below: &DependencyPattern) -> Result<DependencyPattern> {
        if self.cols != below.cols {
            return Err(Error::InvalidShape("stacking patterns with different inputs".into()));
        }
        let mut bits = self.bits.clone();
        bits.extend_from_slice(&below.bits);
        Ok(DependencyPattern {
            rows: self.rows + below.rows,
            cols: self.cols,
            bits,
        })
    }

    pub fn is_all_true(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// Exactly one true entry per row and per column.
    pub fn is_permutation(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|o| (0..self.cols).filter(|&i| self.get(o, i)).count() == 1)
            && (0..self.cols).all(|i| (0..self.rows).filter(|&o| self.get(o, i)).count() == 1)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for DependencyPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for o in 0..self.rows {
            let row: String = (0..self.cols).map(|i| if self.get(o, i) { '#' } else { '.' }).collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

pub fn conv_pattern(spec: &ConvSpec) -> DependencyPattern {
    let (ipg, opg) = (spec.in_per_group(), spec.out_per_group());
    let mut p = DependencyPattern::empty(spec.out_channels, spec.in_channels);
    for o in 0..spec.out_channels {
        let g = o / opg;
        (g * ipg..(g + 1) * ipg).for_each(|i| p.set(o, i));
    }
    p
}

pub fn shuffle_pattern(channels: usize, groups: usize) -> Result<DependencyPattern> {
    let perm = shuffle_permutation(channels, groups)?;
    let mut p = DependencyPattern::empty(channels, channels);
    for (o, &i) in perm.iter().enumerate() {
        p.set(o, i);
    }
    Ok(p)
}

/// Symbolic channel dependencies. BN and activations never mix channels and
/// are treated as identity.
pub trait ChannelDependency {
    fn dependency_pattern(&self) -> Result<DependencyPattern>;
}

pub fn dependency_pattern<T: ChannelDependency + ?Sized>(target: &T) -> Result<DependencyPattern> {
    target.dependency_pattern()
}

impl ChannelDependency for ConvSpec {
    fn dependency_pattern(&self) -> Result<DependencyPattern> {
        Ok(conv_pattern(self))
    }
}

impl ChannelDependency for Conv2d {
    fn dependency_pattern(&self) -> Result<DependencyPattern> {
        Ok(conv_pattern(&self.spec))
    }
}

impl ChannelDependency for MergingOp {
    fn dependency_pattern(&self) -> Result<DependencyPattern> {
        Ok(conv_pattern(&self.conv.spec))
    }
}

impl ChannelDependency for EvolutionOp {
    fn dependency_pattern(&self) -> Result<DependencyPattern> {
        conv_pattern(&self.evolve.spec).then(&conv_pattern(&self.matching.spec))
    }
}

/// From the post-ReLU bottleneck map to the combine output: shuffle, then
/// the depthwise path joined with the fusion path.
pub fn bottleneck_path_pattern(m: &MEModule) -> Result<DependencyPattern> {
    let b = m.cfg.bottleneck_channels;
    let shuffled = shuffle_pattern(b, m.cfg.groups)?;
    let depthwise = shuffled.then(&conv_pattern(&m.dw.spec))?;
    match m.fusion {
        // a constant gate carries no channel information
        FusionHook::Disabled | FusionHook::Constant(_) => Ok(depthwise),
        FusionHook::Enabled => {
            let fused = shuffled
                .then(&m.merging.dependency_pattern()?)?
                .then(&m.evolution.dependency_pattern()?)?;
            depthwise.union(&fused)
        }
    }
}

impl ChannelDependency for MEModule {
    fn dependency_pattern(&self) -> Result<DependencyPattern> {
        let residual = conv_pattern(&self.pw1.spec)
            .then(&bottleneck_path_pattern(self)?)?
            .then(&conv_pattern(&self.pw2.spec))?;
        let skip = DependencyPattern::identity(self.cfg.in_channels);
        if self.cfg.downsample {
            skip.stack(&residual)
        } else {
            skip.union(&residual)
        }
    }
}

/// Numeric dependency probe: raise every value of input channel `i` by
/// `delta` and mark each output channel whose values change at all.
pub fn perturbation_pattern(
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
    input: &Tensor,
    delta: f64,
) -> Result<DependencyPattern> {
    let base = f(input)?;
    let (cin, cout) = (input.shape().c, base.shape().c);
    let mut p = DependencyPattern::empty(cout, cin);
    for i in 0..cin {
        let mut x = input.clone();
        for n in 0..x.shape().n {
            x.plane_mut(n, i).iter_mut().for_each(|v| *v += delta);
        }
        let out = f(&x)?;
        for o in 0..cout {
            let changed = (0..base.shape().n).any(|n| out.plane(n, o) != base.plane(n, o));
            if changed {
                p.set(o, i);
            }
        }
    }
    Ok(p)
}
