//! Central-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Compare the tape gradient of a scalar-valued function at `point` against
/// central finite differences, one coordinate at a time. Returns the largest
/// relative error, using max(1, |analytic|, |numeric|) as the denominator.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut tape = Tape::new(true);
    let x = tape.leaf(point.clone(), true);
    let out = f(&mut tape, x)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::shape("grad_check", "function output must be scalar"));
    }
    let grads = tape.backward(out)?;
    let analytic = match grads.get(x) {
        Some(g) => g.clone(),
        None => Tensor::zeros(point.shape()),
    };

    let eval = |p: &Tensor| -> Result<f64> {
        let mut tape = Tape::new(false);
        let x = tape.leaf(p.clone(), false);
        let out = f(&mut tape, x)?;
        Ok(tape.value(out).data()[0])
    };

    let mut max_rel: f64 = 0.0;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = 1.0_f64.max(a.abs()).max(numeric.abs());
        max_rel = max_rel.max((a - numeric).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_map_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng);
        let x = Tensor::rand_uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let err = grad_check(
            |tape, v| {
                let w = tape.constant(w.clone());
                let y = tape.matmul(v, w)?;
                tape.sum_all(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-9, "linear map error {err}");
    }

    #[test]
    fn softmax_matmul_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = Tensor::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let r = Tensor::rand_uniform(&[2, 5], -1.0, 1.0, &mut rng);
        let x = Tensor::rand_uniform(&[2, 3], -1.0, 1.0, &mut rng);
        let err = grad_check(
            |tape, v| {
                let w = tape.constant(w.clone());
                let r = tape.constant(r.clone());
                let y = tape.matmul(v, w)?;
                let s = tape.softmax(y, 1)?;
                let weighted = tape.mul(s, r)?;
                tape.sum_all(weighted)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "softmax composite error {err}");
    }

    #[test]
    fn rejects_out_of_range_eps() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|tape, v| tape.sum_all(v), &x, 1e-2).is_err());
    }

    #[test]
    fn every_primitive_passes_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for round in 0..20 {
            let x = Tensor::rand_uniform(&[3, 4], -2.0, 2.0, &mut rng);
            let r = Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng);
            let w = Tensor::rand_uniform(&[4, 4], -1.0, 1.0, &mut rng);
            let cases: Vec<Box<dyn Fn(&mut Tape, Var) -> crate::error::Result<Var>>> = vec![
                Box::new(|t, v| {
                    let y = t.relu(v)?;
                    t.sum_all(y)
                }),
                Box::new(|t, v| {
                    let y = t.abs(v)?;
                    t.sum_all(y)
                }),
                Box::new(|t, v| {
                    let y = t.scale(v, -1.7)?;
                    t.sum_all(y)
                }),
                Box::new({
                    let r = r.clone();
                    move |t, v| {
                        let rr = t.constant(r.clone());
                        let s = t.softmax(v, 1)?;
                        let y = t.mul(s, rr)?;
                        t.sum_all(y)
                    }
                }),
                Box::new({
                    let r = r.clone();
                    move |t, v| {
                        let rr = t.constant(r.clone());
                        let s = t.layer_norm(v, 1e-5)?;
                        let y = t.mul(s, rr)?;
                        t.sum_all(y)
                    }
                }),
                Box::new(|t, v| {
                    let m = t.mean(v, 0)?;
                    let y = t.mul(m, m)?;
                    t.sum_all(y)
                }),
                Box::new({
                    let w = w.clone();
                    move |t, v| {
                        let ww = t.constant(w.clone());
                        let y = t.matmul(v, ww)?;
                        let p = t.permute(y, &[1, 0])?;
                        let c = t.concat(&[p, p], 0)?;
                        t.sum_all(c)
                    }
                }),
                Box::new(|t, v| {
                    let d = t.dropout(v, 0.4, true, 1234)?;
                    let y = t.mul(d, d)?;
                    t.sum_all(y)
                }),
                Box::new(|t, v| {
                    let flat = t.reshape(v, &[12])?;
                    let row = t.mean(flat, 0)?;
                    t.sum_all(row)
                }),
            ];
            for (i, case) in cases.iter().enumerate() {
                let err = grad_check(case, &x, 1e-5).unwrap();
                assert!(err <= 1e-4, "primitive case {i} round {round} error {err}");
            }
            // cross_entropy on a logit vector.
            let logits = Tensor::rand_uniform(&[6], -3.0, 3.0, &mut rng);
            let class = round % 6;
            let err = grad_check(
                |t, v| t.cross_entropy(v, class),
                &logits,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "cross_entropy round {round} error {err}");
        }
    }
}
