use crate::numkit::SeededRng;

use super::{NetGradient, StackedNet};

/// Denominator floor for parameters whose true derivative is ~0.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index (see [`StackedNet::flatten`]) of the worst parameter.
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the analytic gradient returned by `loss_fn` with central
/// differences of its loss value.
///
/// `loss_fn` must be deterministic in the parameters. `samples` parameters
/// are drawn without replacement; when `samples` covers the whole network
/// every parameter is checked. The relative error of one parameter is
/// `|a − n| / max(|a| + |n|, 1e-6)`.
pub fn grad_check<F>(
    net: &StackedNet,
    loss_fn: F,
    eps: f64,
    samples: usize,
    rng: &mut SeededRng,
) -> GradCheckReport
where
    F: Fn(&StackedNet) -> (f64, NetGradient),
{
    let (_, analytic) = loss_fn(net);
    let analytic = analytic.flatten();
    let base = net.flatten();
    let mut indices: Vec<usize> = (0..base.len()).collect();
    if samples < indices.len() {
        rng.shuffle(&mut indices);
        indices.truncate(samples);
        indices.sort_unstable();
    }

    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: indices.len(),
    };
    let mut values = base.clone();
    for &i in &indices {
        values[i] = base[i] + eps;
        probe.unflatten(&values).expect("same parameter count");
        let plus = loss_fn(&probe).0;
        values[i] = base[i] - eps;
        probe.unflatten(&values).expect("same parameter count");
        let minus = loss_fn(&probe).0;
        values[i] = base[i];

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_FLOOR);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
    }
    report
}
