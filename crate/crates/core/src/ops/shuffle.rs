use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Destination index of every source channel: channel `g * (c / groups) + i`
/// moves to `i * groups + g`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::Param(format!(
            "cannot shuffle {channels} channels in {groups} groups"
        )));
    }
    let per = channels / groups;
    Ok((0..channels).map(|src| (src % per) * groups + src / per).collect())
}

fn permute(input: &Tensor, dest: &[usize], inverse: bool) -> Tensor {
    let s = input.shape();
    let plane = s.plane();
    let mut out = Tensor::zeros(s);
    let o = out.data_mut();
    for n in 0..s.batch {
        for (src, &dst) in dest.iter().enumerate() {
            let (from, to) = if inverse { (dst, src) } else { (src, dst) };
            o[(n * s.channels + to) * plane..][..plane].copy_from_slice(input.plane(n, from));
        }
    }
    out
}

pub fn channel_shuffle(input: &Tensor, groups: usize) -> Result<Tensor> {
    let perm = shuffle_permutation(input.shape().channels, groups)?;
    Ok(permute(input, &perm, false))
}

/// Gradient of [`channel_shuffle`]: the inverse permutation.
pub fn channel_shuffle_backward(grad_out: &Tensor, groups: usize) -> Result<Tensor> {
    let perm = shuffle_permutation(grad_out.shape().channels, groups)?;
    Ok(permute(grad_out, &perm, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn channels_tensor(c: usize) -> Tensor {
        Tensor::from_vec(Shape4::new(1, c, 1, 1).unwrap(), (0..c).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn six_channels_two_groups() {
        let y = channel_shuffle(&channels_tensor(6), 2).unwrap();
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn single_group_is_identity() {
        let x = channels_tensor(5);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn eight_channels_four_then_two_groups() {
        // 4 groups then 2 groups on 8 channels are mutually inverse
        let x = channels_tensor(8);
        let y = channel_shuffle(&channel_shuffle(&x, 4).unwrap(), 2).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn divisibility() {
        assert!(channel_shuffle(&channels_tensor(6), 4).is_err());
    }
}
