//! Central finite-difference verification of backward rules.

use rand::Rng;
use rand_distr::StandardNormal;

use super::array::DiffArray;
use super::nn::{self, AttentionWeights, FeedForwardWeights};
use super::tape::{Segment, Tape, Var};
use crate::rng;
use crate::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const LINEAR_TOLERANCE: f64 = 1e-6;
/// Denominator floor, so gradients that vanish identically (a key bias under
/// softmax shift invariance) are compared against rounding noise absolutely.
pub const GRAD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Largest per-input ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, GRAD_FLOOR).
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(GRAD_FLOOR)
}

/// Compares backward-pass gradients of `f` with central differences of step `h`
/// over every entry of every input.
pub fn check<F>(name: &str, inputs: &[DiffArray], h: f64, tolerance: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.variable(a)).collect::<Result<_>>()?;
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let eval = |arrays: &[DiffArray]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = arrays.iter().map(|a| t.constant_array(a)).collect::<Result<_>>()?;
        let l = f(&mut t, &vs)?;
        Ok(t.value(l)[0])
    };

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for j in 0..a.len() {
            let orig = work[i].values()[j];
            work[i].values_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].values_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].values_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * h);
        }
        worst = worst.max(relative_error(a, &numeric));
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        tolerance,
    })
}

pub fn random_array<R: Rng>(shape: Vec<usize>, rng: &mut R) -> DiffArray {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DiffArray::new(shape, values).expect("shape matches")
}

fn weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Finite-difference checks of every tape operator on random instances with
/// extents ≤ 8. Outputs are reduced with fixed random weights so that
/// normalising operators still have informative gradients.
pub fn operator_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = rng::derive(seed, &[0x6772_6164]);
    let mut out = Vec::new();
    let h = STEP;

    macro_rules! reduce {
        ($tape:expr, $y:expr, $w:expr) => {{
            let y = $y;
            nn::weighted_sum($tape, y, $w.clone())
        }};
    }

    let w = weights(3 * 2, &mut rng);
    out.push(check(
        "matmul",
        &[random_array(vec![3, 4], &mut rng), random_array(vec![4, 2], &mut rng)],
        h,
        LINEAR_TOLERANCE,
        |t, v| reduce!(t, t.matmul(v[0], v[1])?, w),
    )?);

    let w = weights(5 * 4, &mut rng);
    out.push(check(
        "add_row",
        &[random_array(vec![5, 4], &mut rng), random_array(vec![4], &mut rng)],
        h,
        LINEAR_TOLERANCE,
        |t, v| reduce!(t, t.add_row(v[0], v[1])?, w),
    )?);

    let w = weights(12, &mut rng);
    out.push(check(
        "add_sub_scale",
        &[random_array(vec![3, 4], &mut rng), random_array(vec![3, 4], &mut rng)],
        h,
        LINEAR_TOLERANCE,
        |t, v| {
            let a = t.add(v[0], v[1])?;
            let b = t.sub(a, v[1])?;
            let c = t.scale(b, -1.7)?;
            let d = t.add(c, v[1])?;
            reduce!(t, d, w)
        },
    )?);

    let w = weights(5 * 7, &mut rng);
    out.push(check(
        "concat_vstack_reshape",
        &[
            random_array(vec![2, 3], &mut rng),
            random_array(vec![2, 4], &mut rng),
            random_array(vec![3, 7], &mut rng),
        ],
        h,
        LINEAR_TOLERANCE,
        |t, v| {
            let c = t.concat_cols(&[v[0], v[1]])?;
            let s = t.vstack(&[c, v[2]])?;
            let r = t.reshape(s, vec![35])?;
            reduce!(t, r, w)
        },
    )?);

    let w = weights(5 * 3, &mut rng);
    out.push(check(
        "gather_rows",
        &[random_array(vec![6, 3], &mut rng)],
        h,
        LINEAR_TOLERANCE,
        |t, v| reduce!(t, t.gather_rows(v[0], vec![0, 5, 2, 5, 1])?, w),
    )?);

    let w = weights(3 * 4, &mut rng);
    out.push(check(
        "segment_mean",
        &[random_array(vec![8, 4], &mut rng)],
        h,
        LINEAR_TOLERANCE,
        |t, v| reduce!(t, t.segment_mean(v[0], Segment::consecutive([3, 1, 4]))?, w),
    )?);

    let w = weights(12, &mut rng);
    out.push(check(
        "mul",
        &[random_array(vec![3, 4], &mut rng), random_array(vec![3, 4], &mut rng)],
        h,
        TOLERANCE,
        |t, v| reduce!(t, t.mul(v[0], v[1])?, w),
    )?);

    let w = weights(4 * 5, &mut rng);
    out.push(check("relu", &[random_array(vec![4, 5], &mut rng)], h, TOLERANCE, |t, v| {
        reduce!(t, t.relu(v[0])?, w)
    })?);

    let w = weights(4 * 6, &mut rng);
    out.push(check("softmax_rows", &[random_array(vec![4, 6], &mut rng)], h, TOLERANCE, |t, v| {
        reduce!(t, t.softmax_rows(v[0])?, w)
    })?);

    let w = weights(3 * 8, &mut rng);
    out.push(check(
        "layer_norm",
        &[
            random_array(vec![3, 8], &mut rng),
            random_array(vec![8], &mut rng),
            random_array(vec![8], &mut rng),
        ],
        h,
        TOLERANCE,
        |t, v| reduce!(t, t.layer_norm(v[0], v[1], v[2], 1e-5)?, w),
    )?);

    let inputs: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
    let w = weights(5 * 8, &mut rng);
    let omega = DiffArray::new(vec![4], (0..4).map(|_| rng.random_range(0.2..2.0)).collect())?;
    out.push(check("psi", &[omega], h, TOLERANCE, |t, v| {
        reduce!(t, t.psi(v[0], inputs.clone())?, w)
    })?);

    let w = weights(3 * 2 * 8, &mut rng);
    out.push(check(
        "attention",
        &[
            random_array(vec![2, 8], &mut rng),
            random_array(vec![7, 8], &mut rng),
            random_array(vec![7, 8], &mut rng),
        ],
        h,
        TOLERANCE,
        |t, v| reduce!(t, t.attention(v[0], v[1], v[2], Segment::consecutive([3, 1, 3]), 2)?, w),
    )?);

    let mut mha_inputs = vec![
        random_array(vec![2, 8], &mut rng),
        random_array(vec![3, 8], &mut rng),
        random_array(vec![3, 8], &mut rng),
    ];
    for _ in 0..4 {
        mha_inputs.push(random_array(vec![8, 8], &mut rng));
        mha_inputs.push(random_array(vec![8], &mut rng));
    }
    let w = weights(2 * 8, &mut rng);
    out.push(check("multi_head_attention", &mha_inputs, h, TOLERANCE, |t, v| {
        let aw = AttentionWeights {
            wq: v[3],
            bq: v[4],
            wk: v[5],
            bk: v[6],
            wv: v[7],
            bv: v[8],
            wo: v[9],
            bo: v[10],
        };
        let y = nn::multi_head_attention(t, v[0], v[1], v[2], 2, &aw, vec![Segment::new(0, 3)])?;
        reduce!(t, y, w)
    })?);

    let w = weights(3 * 4, &mut rng);
    out.push(check(
        "feed_forward",
        &[
            random_array(vec![3, 4], &mut rng),
            random_array(vec![4, 6], &mut rng),
            random_array(vec![6], &mut rng),
            random_array(vec![6, 4], &mut rng),
            random_array(vec![4], &mut rng),
        ],
        h,
        TOLERANCE,
        |t, v| {
            let fw = FeedForwardWeights {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            reduce!(t, nn::feed_forward(t, v[0], &fw)?, w)
        },
    )?);

    let w = weights(3 * 2, &mut rng);
    out.push(check("gather_dots", &[random_array(vec![6, 5], &mut rng)], h, TOLERANCE, |t, v| {
        reduce!(t, t.gather_dots(v[0], vec![0, 1, 2], vec![vec![3, 4], vec![4, 0], vec![5, 5]])?, w)
    })?);

    out.push(check("cross_entropy", &[random_array(vec![4, 5], &mut rng)], h, TOLERANCE, |t, v| {
        t.cross_entropy(v[0], vec![0, 3, 4, 1])
    })?);

    let w = weights(3 * 4, &mut rng);
    out.push(check("l2_normalize_rows", &[random_array(vec![3, 4], &mut rng)], h, TOLERANCE, |t, v| {
        reduce!(t, t.l2_normalize_rows(v[0])?, w)
    })?);

    Ok(out)
}
