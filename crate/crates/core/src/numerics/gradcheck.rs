use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, NumericsError, ParameterStore};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    /// Flat index of the worst probe.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Magnitude below which gradients are compared on an absolute scale, far
/// above the difference quotient's round-off (about `1e-12·|loss|`).
pub const GRADIENT_FLOOR: f64 = 1e-5;

const STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];
const KINK_TOLERANCE: f64 = 1e-5;

/// Relative error `|a − n| / max(|a| + |n|, GRADIENT_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRADIENT_FLOOR)
}

/// Probes `probes` scalar parameters chosen uniformly without replacement
/// (every parameter when there are fewer) and compares the analytic gradient
/// against the fourth-order five-point central difference with step
/// `h = 1e-4·(1 + |θ|)`. When the `h` and `2h` central differences disagree
/// a ReLU or `|·|` kink lies inside the stencil, and `h` shrinks tenfold (down
/// to `1e-6`).
///
/// `build` records the forward pass into the given graph and returns the
/// scalar loss node.
pub fn grad_check<F>(
    build: F,
    params: &ParameterStore<f64>,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport, NumericsError>
where
    F: for<'p> Fn(&mut Graph<'p, f64>, &'p ParameterStore<f64>) -> Result<NodeId, NumericsError>,
{
    let analytic = {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        g.backward(loss, params)?
    };
    let eval = |store: &ParameterStore<f64>| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        Ok(g.value(loss).item())
    };

    let total = params.scalar_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if probes >= total {
        (0..total).collect()
    } else {
        let mut v = sample(&mut rng, total, probes).into_vec();
        v.sort_unstable();
        v
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: chosen.len(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for &flat in &chosen {
        let (tid, off) = params.locate(flat).expect("index in range");
        let name = params.name(tid).to_string();
        let theta = params.by_index(tid).data()[off];
        let mut at = |delta: f64| -> Result<f64, NumericsError> {
            work.get_mut(&name).unwrap().data_mut()[off] = theta + delta;
            eval(&work)
        };
        let mut numeric = 0.0;
        for step in STEPS {
            let h = step * (1.0 + theta.abs());
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            let (c1, c2) = ((p1 - m1) / (2.0 * h), (p2 - m2) / (4.0 * h));
            numeric = (4.0 * c1 - c2) / 3.0;
            if relative_error(c1, c2) <= KINK_TOLERANCE {
                break;
            }
        }
        work.get_mut(&name).unwrap().data_mut()[off] = theta;

        let a = analytic.flat(flat).expect("index in range");
        let err = relative_error(a, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = flat;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
