//! Central finite-difference checks of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, Var};
use crate::optim::{LossKind, QuantileSpec};
use crate::optim::loss::record_bce;
use crate::tempflow::{lstm_step, LstmLayerWeights};
use crate::tensor::Tensor;

/// Pass threshold for every case of [`run_suite`].
pub const SUITE_TOLERANCE: f64 = 1e-4;
/// Step used by [`run_suite`].
pub const SUITE_EPSILON: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Largest relative error between the analytic gradient of a scalar
/// function and its central difference, over every coordinate of `point`.
pub fn grad_check<F>(build: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, xs| build(g, xs[0]), std::slice::from_ref(point), epsilon)
}

/// Like [`grad_check`] for functions of several tensors; the error is the
/// maximum over all coordinates of all inputs.
pub fn grad_check_many<F>(build: F, points: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("grad_check: epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.param(p.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = pts.iter().map(|p| g.constant(p.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut work = points.to_vec();
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..points[t].len() {
            let orig = points[t].data()[i];
            work[t].data_mut()[i] = orig + epsilon;
            let up = eval(&work)?;
            work[t].data_mut()[i] = orig - epsilon;
            let down = eval(&work)?;
            work[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Reduces any tensor to a scalar via a fixed random weighting, so a
/// non-scalar op can be checked through every output coordinate.
pub fn project(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone().reshape(g.shape(out).to_vec())?);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

#[derive(Clone, Debug)]
pub struct GradCheckCase {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

type CaseFn = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

fn projected<F>(rng: &mut ChaCha8Rng, shapes: &[&[usize]], out_len: usize, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let points: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(rng, s, -1.0, 1.0)).collect();
    let weights = rand_tensor(rng, &[out_len], 0.5, 1.5);
    grad_check_many(
        |g, xs| {
            let y = f(g, xs)?;
            project(g, y, &weights)
        },
        &points,
        SUITE_EPSILON,
    )
}

fn loss_case(rng: &mut ChaCha8Rng, kind: LossKind) -> Result<f64> {
    let n = 8;
    // predictions kept at least 0.1 from every target so no residual sits on a kink
    let target: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let pred: Vec<f64> = target
        .iter()
        .map(|t| t + rng.random_range(0.1..0.5) * if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    grad_check(|g, x| kind.record(g, x, &target), &Tensor::vector(pred), SUITE_EPSILON)
}

fn cases() -> Vec<(&'static str, CaseFn)> {
    vec![
        ("conv2d", Box::new(|r| {
            projected(r, &[&[2, 8, 8], &[3, 2, 3, 3], &[3]], 3 * 6 * 6, |g, x| g.conv2d(x[0], x[1], x[2], 1))
        })),
        ("conv2d_batched_stride2", Box::new(|r| {
            projected(r, &[&[2, 2, 7, 7], &[2, 2, 3, 3], &[2]], 2 * 2 * 3 * 3, |g, x| g.conv2d(x[0], x[1], x[2], 2))
        })),
        ("maxpool2d", Box::new(|r| projected(r, &[&[3, 8, 8]], 3 * 4 * 4, |g, x| g.maxpool2d(x[0], 2)))),
        ("relu", Box::new(|r| projected(r, &[&[64]], 64, |g, x| Ok(g.activation(Activation::Relu, x[0]))))),
        ("sigmoid", Box::new(|r| projected(r, &[&[64]], 64, |g, x| Ok(g.activation(Activation::Sigmoid, x[0]))))),
        ("tanh", Box::new(|r| projected(r, &[&[64]], 64, |g, x| Ok(g.activation(Activation::Tanh, x[0]))))),
        ("dense", Box::new(|r| {
            projected(r, &[&[3, 10], &[10, 4], &[4]], 12, |g, x| {
                let y = g.matmul(x[0], x[1])?;
                g.add_row_bias(y, x[2])
            })
        })),
        ("softmax_rows", Box::new(|r| projected(r, &[&[4, 16]], 64, |g, x| g.softmax_rows(x[0])))),
        ("layer_norm", Box::new(|r| {
            projected(r, &[&[4, 16], &[16], &[16]], 64, |g, x| g.layer_norm(x[0], x[1], x[2], 1e-5))
        })),
        ("attention", Box::new(|r| {
            // one self-attention head over a 4×16 input: Q, K, V projections plus scaled softmax
            projected(r, &[&[4, 16], &[16, 8], &[16, 8], &[16, 8]], 32, |g, x| {
                let q = g.matmul(x[0], x[1])?;
                let k = g.matmul(x[0], x[2])?;
                let v = g.matmul(x[0], x[3])?;
                g.attention(q, k, v, 4)
            })
        })),
        ("lstm_bptt_5_steps", Box::new(lstm_case)),
        ("bce", Box::new(|r| {
            let labels: Vec<f64> = (0..8).map(|i| f64::from(i % 2)).collect();
            let p = rand_tensor(r, &[8], 0.1, 0.9);
            grad_check(|g, x| record_bce(g, x, &labels), &p, SUITE_EPSILON)
        })),
        ("quantile_tau_0.9", Box::new(|r| loss_case(r, LossKind::Quantile(QuantileSpec::new(0.9)?)))),
        ("mae", Box::new(|r| loss_case(r, LossKind::Mae))),
        ("mse", Box::new(|r| loss_case(r, LossKind::Mse))),
        ("weighted_mae", Box::new(|r| loss_case(r, LossKind::WeightedMae { alpha: 4.0 }))),
    ]
}

fn lstm_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (input, units, steps) = (3, 4, 5);
    let weights = LstmLayerWeights::init(input, units, rng);
    let mut points: Vec<Tensor> = weights.tensors().into_iter().cloned().collect();
    let xs: Vec<Tensor> = (0..steps).map(|_| rand_tensor(rng, &[1, input], -1.0, 1.0)).collect();
    points.extend(xs);
    let readout = rand_tensor(rng, &[units], 0.5, 1.5);
    grad_check_many(
        |g, v| {
            let w = crate::tempflow::LstmVars::from_slice(&v[..12]);
            let mut h = g.constant(Tensor::zeros(vec![1, units]));
            let mut c = h;
            for &x in &v[12..] {
                (h, c) = lstm_step(g, &w, x, h, c)?;
            }
            project(g, h, &readout)
        },
        &points,
        SUITE_EPSILON,
    )
}

/// Runs every case on seeded random inputs.
pub fn run_suite(seed: u64) -> Vec<GradCheckCase> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(i, (name, case))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let err = case(&mut rng).unwrap_or(f64::INFINITY);
            GradCheckCase { name: name.to_string(), max_rel_error: err, passed: err < SUITE_TOLERANCE }
        })
        .collect()
}

/// Checks a deliberately wrong gradient (sign flipped) to confirm the
/// harness detects it. Returns the case, which should not pass.
pub fn sign_error_double(seed: u64) -> GradCheckCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = rand_tensor(&mut rng, &[6], -1.0, 1.0);
    let err = grad_check(
        |g, x| {
            let v = g.value(x).data();
            let value = v.iter().map(|a| a * a).sum();
            let wrong = v.iter().map(|a| -2.0 * a).collect();
            g.loss_node(x, value, wrong)
        },
        &point,
        SUITE_EPSILON,
    )
    .unwrap_or(f64::INFINITY);
    GradCheckCase { name: "sign_error_double".into(), max_rel_error: err, passed: err < SUITE_TOLERANCE }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_op_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[12], -2.0, 2.0);
        let w = rand_tensor(&mut rng, &[12], -2.0, 2.0);
        let err = grad_check(|g, v| project(g, v, &w), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
        let err = grad_check(|g, v| { let s = g.scale(v, 3.5); Ok(g.sum(s)) }, &x, 1e-3).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn epsilon_range_enforced() {
        let x = Tensor::vector(vec![1.0]);
        assert!(grad_check(|g, v| Ok(g.sum(v)), &x, 1e-2).is_err());
        assert!(grad_check(|g, v| Ok(g.sum(v)), &x, 1e-8).is_err());
    }

    #[test]
    fn suite_passes_and_detects_sign_error() {
        for case in run_suite(7) {
            assert!(case.passed, "{} failed with {}", case.name, case.max_rel_error);
        }
        assert!(!sign_error_double(7).passed);
    }
}
