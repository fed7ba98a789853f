use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tensor::{Rng, Tensor};

use super::ComputeGraph;

/// What to differentiate with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrt {
    Input,
    /// Index into [`ComputeGraph::param_names`].
    Param(usize),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - fd| / max(|analytic|, |fd|, 1e-8)` over checked elements.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(analytic, finite difference)` for every checked element.
    pub pairs: Vec<(f64, f64)>,
    pub checked: usize,
    /// Elements skipped because a `±h` perturbation changed a ReLU sign or a
    /// pooling argmax, so the central difference straddles a kink.
    pub skipped_kinks: usize,
}

/// Compares analytic gradients with central differences of step `h`.
///
/// `loss` maps the graph output to a scalar and its gradient w.r.t. that
/// output; every evaluation reuses `seed` for the dropout stream.
pub fn gradient_check<L>(
    graph: &mut ComputeGraph,
    input: &Tensor,
    wrt: Wrt,
    h: f64,
    mode: Mode,
    seed: u64,
    loss: L,
) -> Result<GradCheckReport>
where
    L: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    let eval = |graph: &mut ComputeGraph, x: &Tensor| -> Result<(f64, Tensor)> {
        let out = graph.forward(x, mode, &mut Rng::new(seed))?;
        loss(out)
    };
    let snapshot = graph.node_params().to_vec();

    let (_, dout) = eval(graph, input)?;
    let grads = graph.backward(&dout)?;
    let base_sig = graph.branch_signature()?;
    let analytic = match wrt {
        Wrt::Input => grads.input.into_data(),
        Wrt::Param(i) => grads
            .params
            .get(i)
            .cloned()
            .ok_or_else(|| Error::Param(format!("no parameter {i}")))?,
    };

    let mut x = input.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        pairs: Vec::new(),
        checked: 0,
        skipped_kinks: 0,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let side = |delta: f64, graph: &mut ComputeGraph, x: &mut Tensor| -> Result<(f64, bool)> {
            nudge(graph, x, wrt, i, delta);
            let r = eval(graph, x);
            nudge(graph, x, wrt, i, -delta);
            let (l, _) = r?;
            Ok((l, graph.branch_signature()? == base_sig))
        };
        let (plus, same_plus) = side(h, graph, &mut x)?;
        let (minus, same_minus) = side(-h, graph, &mut x)?;
        if !(same_plus && same_minus) {
            report.skipped_kinks += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * h);
        let err = (a - fd).abs();
        report.max_rel_error = report.max_rel_error.max(err / a.abs().max(fd.abs()).max(1e-8));
        report.max_abs_error = report.max_abs_error.max(err);
        report.pairs.push((a, fd));
        report.checked += 1;
    }
    // forward passes in train mode move the running statistics
    graph.node_params_mut().clone_from_slice(&snapshot);
    graph.clear_tape();
    Ok(report)
}

impl GradCheckReport {
    /// True when every checked element satisfies
    /// `|a - fd| <= atol + rtol * max(|a|, |fd|)`. The absolute term absorbs
    /// rounding noise in the difference quotient where the true gradient is
    /// zero or nearly so.
    pub fn within(&self, rtol: f64, atol: f64) -> bool {
        self.pairs
            .iter()
            .all(|&(a, fd)| (a - fd).abs() <= atol + rtol * a.abs().max(fd.abs()))
    }

    /// Largest `|a - fd| - rtol * max(|a|, |fd|)` over checked elements, the
    /// smallest `atol` for which [`within`](Self::within) holds.
    pub fn excess(&self, rtol: f64) -> f64 {
        self.pairs
            .iter()
            .map(|&(a, fd)| (a - fd).abs() - rtol * a.abs().max(fd.abs()))
            .fold(0.0, f64::max)
    }
}

fn nudge(graph: &mut ComputeGraph, x: &mut Tensor, wrt: Wrt, i: usize, delta: f64) {
    match wrt {
        Wrt::Input => x.data_mut()[i] += delta,
        Wrt::Param(p) => graph.params_mut()[p][i] += delta,
    }
}

/// Loss `sum(output * weights)` with a fixed weight tensor.
pub fn projection_loss(weights: Tensor) -> impl Fn(&Tensor) -> Result<(f64, Tensor)> {
    move |out: &Tensor| {
        if out.shape() != weights.shape() {
            return Err(Error::Shape("projection loss: shape mismatch".into()));
        }
        let l = out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok((l, weights.clone()))
    }
}
