use super::Layer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Source channel for each output position: with `n = c / g`, output
/// position `j * g + a` takes input channel `a * n + j`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || channels % groups != 0 {
        return Err(Error::Indivisible {
            op: "channel_shuffle",
            channels,
            groups,
        });
    }
    let per = channels / groups;
    Ok((0..channels).map(|p| (p % groups) * per + p / groups).collect())
}

fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    let s = x.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for (dst, &src) in perm.iter().enumerate() {
            out.plane_mut(n, dst).copy_from_slice(x.plane(n, src));
        }
    }
    out
}

pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let perm = shuffle_permutation(x.shape().c, groups)?;
    Ok(permute(x, &perm))
}

#[derive(Debug, Clone)]
pub struct ChannelShuffle {
    pub groups: usize,
    perm: Option<Vec<usize>>,
}

impl ChannelShuffle {
    pub fn new(groups: usize) -> Self {
        ChannelShuffle { groups, perm: None }
    }
}

impl Layer for ChannelShuffle {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let perm = shuffle_permutation(x.shape().c, self.groups)?;
        let out = permute(x, &perm);
        self.perm = Some(perm);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let perm = self
            .perm
            .as_ref()
            .ok_or(Error::MissingForwardCache("channel_shuffle"))?;
        let s = grad_out.shape();
        if s.c != perm.len() {
            return Err(Error::InvalidShape(format!("shuffle backward got {s}")));
        }
        let mut gx = Tensor::zeros(s);
        for n in 0..s.n {
            for (dst, &src) in perm.iter().enumerate() {
                gx.plane_mut(n, src).copy_from_slice(grad_out.plane(n, dst));
            }
        }
        Ok(gx)
    }
}
