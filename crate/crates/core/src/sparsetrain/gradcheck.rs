//! Central finite-difference check of analytic gradients.

use rand::Rng;

use super::network::{LayerKind, LayerSpec, Network, Shape};
use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub parameters: usize,
    /// Components compared against the finite difference.
    pub checked: usize,
    /// Components whose perturbation flipped a ReLU or max-pool branch; the
    /// objective has a kink there and the difference quotient is meaningless.
    pub kinks: usize,
    /// Compared components whose magnitude fell below the floor.
    pub below_floor: usize,
    /// Largest `|a - n| / max(|a|, |n|, floor)`.
    pub max_rel_error: f64,
}

/// `|a - b| / max(|a|, |b|, floor)`, or 0 when the scale is 0.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares the gradient of the full objective (cross-entropy, activation
/// penalty and weight decay) with `(f(w + h) - f(w - h)) / 2h` for every
/// parameter.
///
/// With `h = 1e-6` in f64 the difference quotient carries roughly `1e-11`
/// of rounding noise, so a plain relative error is meaningless for
/// components much below `1e-5`. `floor` bounds the denominator from below;
/// for those components the test becomes an absolute one at
/// `tolerance * floor`.
pub fn check_gradients(
    net: &Network<f64>,
    input: &[f64],
    labels: &[u8],
    step: f64,
    floor: f64,
) -> Result<GradCheckReport, TrainError> {
    let base = net.forward(input, labels)?;
    let analytic = net.objective_gradient(&base)?.flatten();
    let params = net.flat_params();
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        parameters: params.len(),
        checked: 0,
        kinks: 0,
        below_floor: 0,
        max_rel_error: 0.0,
    };
    for (i, (&w, &a)) in params.iter().zip(&analytic).enumerate() {
        probe.set_flat_param(i, w + step);
        let plus = probe.forward(input, labels)?;
        let f_plus = probe.objective(&plus);
        probe.set_flat_param(i, w - step);
        let minus = probe.forward(input, labels)?;
        let f_minus = probe.objective(&minus);
        probe.set_flat_param(i, w);
        if !net.same_branches(&base, &plus) || !net.same_branches(&base, &minus) {
            report.kinks += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * step);
        if a.abs().max(numeric.abs()) < floor {
            report.below_floor += 1;
        }
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric, floor));
    }
    Ok(report)
}

/// A random conv -> pool -> ReLU -> dense -> ReLU -> dense network with at
/// most about 500 parameters, plus a matching random batch.
pub fn random_small_network<R: Rng>(
    rng: &mut R,
    alphas: [f64; 2],
    weight_decay: f64,
    batch: usize,
) -> Result<(Network<f64>, Vec<f64>, Vec<u8>), TrainError> {
    let side = rng.gen_range(6..=8usize);
    let in_c = rng.gen_range(1..=2usize);
    let kernel = rng.gen_range(2..=3usize);
    let conv_c = rng.gen_range(2..=4usize);
    let conv_side = side - kernel + 1;
    let pooled = conv_side / 2;
    let flat = pooled * pooled * conv_c;
    let hidden = rng.gen_range(4..=8usize);
    let classes = rng.gen_range(3..=5usize);
    let layers = vec![
        LayerSpec::conv("conv", in_c, conv_c, kernel),
        LayerSpec::pool("pool", 2),
        LayerSpec::relu("act1").with_alpha(alphas[0]),
        LayerSpec::new("flatten", LayerKind::Flatten),
        LayerSpec::dense("dense1", flat, hidden),
        LayerSpec::relu("act2").with_alpha(alphas[1]),
        LayerSpec::dense("dense2", hidden, classes),
        LayerSpec::new("loss", LayerKind::SoftmaxCrossEntropy),
    ];
    let shape = Shape::new(side, side, in_c);
    let net = Network::new(shape, layers, weight_decay, rng)?;
    let input = (0..batch * shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..batch).map(|_| rng.gen_range(0..classes as u8)).collect();
    Ok((net, input, labels))
}
