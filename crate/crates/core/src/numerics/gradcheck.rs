//! Finite-difference verification of reverse-mode gradients.

use crate::numerics::{Matrix, Tape, Var};
use crate::rng::derive_rng;
use crate::Result;

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Check an arbitrary scalar-valued computation against central finite
/// differences.
///
/// `forward` evaluates the scalar at a point; `analytic` returns one
/// gradient matrix per input, shaped like it. Returns the max relative
/// error over all input entries. The two paths must be computed
/// independently for the check to mean anything; here only `forward` is
/// shared, which is the standard arrangement.
pub fn grad_check_fn<F, G>(forward: F, analytic: G, point: &[Matrix], eps: f64) -> Result<f64>
where
    F: Fn(&[Matrix]) -> Result<f64>,
    G: Fn(&[Matrix]) -> Result<Vec<Matrix>>,
{
    assert!(eps > 0.0, "eps must be positive");
    let grads = analytic(point)?;
    assert_eq!(grads.len(), point.len(), "one gradient per input");
    let mut worst = 0.0_f64;
    let mut probe: Vec<Matrix> = point.to_vec();
    for (i, g) in grads.iter().enumerate() {
        assert_eq!(
            g.shape(),
            point[i].shape(),
            "gradient {i} shaped like its input"
        );
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                let orig = probe[i].get(r, c);
                probe[i].set(r, c, orig + eps);
                let plus = forward(&probe)?;
                probe[i].set(r, c, orig - eps);
                let minus = forward(&probe)?;
                probe[i].set(r, c, orig);
                let numeric = (plus - minus) / (2.0 * eps);
                worst = worst.max(rel_error(g.get(r, c), numeric));
            }
        }
    }
    Ok(worst)
}

/// Check a tape-built computation whose output may be any shape.
///
/// The output is scalarized against a fixed pseudo-random weight matrix
/// (derived from the output shape) so that every output entry influences
/// the checked scalar. Inputs are all treated as trainable leaves.
pub fn grad_check<B>(build: B, point: &[Matrix], eps: f64) -> Result<f64>
where
    B: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    // Discover the output shape, then fix scalarization weights.
    let probe_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point
            .iter()
            .map(|m| tape.leaf(m.clone()))
            .collect::<Result<_>>()?;
        let out = build(&mut tape, &vars)?;
        tape.value(out).shape()
    };
    let mut wrng = derive_rng(0x6ead_c0de, &[probe_shape.0 as u64, probe_shape.1 as u64]);
    let weights = Matrix::gaussian(probe_shape.0, probe_shape.1, 1.0, &mut wrng);

    let forward = |inputs: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|m| tape.constant(m.clone()))
            .collect::<Result<_>>()?;
        let out = build(&mut tape, &vars)?;
        tape.value(out).dot(&weights)
    };
    let analytic = |inputs: &[Matrix]| -> Result<Vec<Matrix>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|m| tape.leaf(m.clone()))
            .collect::<Result<_>>()?;
        let out = build(&mut tape, &vars)?;
        let grads = tape.backward_seeded(&[(out, weights.clone())])?;
        Ok(vars
            .iter()
            .zip(inputs.iter())
            .map(|(v, m)| grads.get_or_zeros(*v, m.rows(), m.cols()))
            .collect())
    };
    grad_check_fn(forward, analytic, point, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn seeded(rows: usize, cols: usize, tag: u64) -> Matrix {
        let mut rng = derive_rng(41, &[tag]);
        Matrix::gaussian(rows, cols, 1.0, &mut rng)
    }

    #[test]
    fn linear_map_is_exact() {
        // d(w . x)/dx = w: central differences are exact for linear maps.
        let w = seeded(3, 3, 1);
        let err = grad_check(
            |tape, vars| {
                let wv = tape.constant(w.clone())?;
                tape.matmul(vars[0], wv)
            },
            &[seeded(3, 3, 2)],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err <= 1e-9, "linear map error {err}");
    }

    #[test]
    fn softmax_of_matmul_at_seeded_points() {
        for tag in 0..3 {
            let err = grad_check(
                |tape, vars| {
                    let prod = tape.matmul(vars[0], vars[1])?;
                    Ok(tape.row_softmax(prod))
                },
                &[seeded(4, 4, 10 + tag), seeded(4, 4, 20 + tag)],
                DEFAULT_EPS,
            )
            .unwrap();
            assert!(err <= 1e-6, "softmax∘matmul error {err}");
        }
    }

    #[test]
    fn softmax_cross_entropy_eight_classes() {
        for tag in 0..3 {
            let err = grad_check(
                |tape, vars| tape.cross_entropy_logits(vars[0], 3),
                &[seeded(1, 8, 30 + tag)],
                DEFAULT_EPS,
            )
            .unwrap();
            assert!(err <= 1e-6, "cross-entropy error {err}");
        }
    }

    #[test]
    fn every_primitive_under_tolerance_at_three_points() {
        type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
        let cases: Vec<(&str, Vec<(usize, usize)>, Build)> = vec![
            (
                "matmul",
                vec![(3, 4), (4, 2)],
                Box::new(|t, v| t.matmul(v[0], v[1])),
            ),
            (
                "add",
                vec![(3, 3), (3, 3)],
                Box::new(|t, v| t.add(v[0], v[1])),
            ),
            (
                "elem_mul",
                vec![(3, 3), (3, 3)],
                Box::new(|t, v| t.elem_mul(v[0], v[1])),
            ),
            ("scale", vec![(2, 5)], Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
            ("transpose", vec![(2, 5)], Box::new(|t, v| Ok(t.transpose(v[0])))),
            ("relu", vec![(3, 4)], Box::new(|t, v| Ok(t.relu(v[0])))),
            (
                "row_softmax",
                vec![(3, 5)],
                Box::new(|t, v| Ok(t.row_softmax(v[0]))),
            ),
            (
                "row_rms_norm",
                vec![(3, 5)],
                Box::new(|t, v| Ok(t.row_rms_norm(v[0], 1e-6))),
            ),
            (
                "row_l2_normalize",
                vec![(3, 5)],
                Box::new(|t, v| Ok(t.row_l2_normalize(v[0], 1e-12))),
            ),
            (
                "dot",
                vec![(3, 3), (3, 3)],
                Box::new(|t, v| t.dot(v[0], v[1])),
            ),
            (
                "stack_rows",
                vec![(3, 4), (2, 4)],
                Box::new(|t, v| t.stack_rows(&[(v[0], 2), (v[1], 0), (v[0], 1)])),
            ),
            (
                "replace_row",
                vec![(3, 4), (1, 4)],
                Box::new(|t, v| t.replace_row(v[0], 1, v[1])),
            ),
            (
                "cross_entropy",
                vec![(1, 6)],
                Box::new(|t, v| t.cross_entropy_logits(v[0], 2)),
            ),
        ];
        for (name, shapes, build) in &cases {
            for point_idx in 0..3u64 {
                let point: Vec<Matrix> = shapes
                    .iter()
                    .enumerate()
                    .map(|(i, &(r, c))| seeded(r, c, 100 * point_idx + i as u64 + crate::rng::name_tag(name) % 97))
                    .collect();
                let err = grad_check(build, &point, DEFAULT_EPS).unwrap();
                assert!(err <= 1e-4, "{name} at point {point_idx}: error {err}");
            }
        }
    }
}
