use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds;

use super::{Tape, Tensor, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: usize,
    /// `(tensor, element, analytic, numeric)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
const DENOMINATOR_FLOOR: f64 = 1e-6;

/// Checks `f` at `probe_count` random coordinates of `params`.
///
/// `f` must build a one-element output from the parameter variables it is
/// given. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<F>(f: F, params: &[Tensor<f64>], probe_count: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let evaluate = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.parameter(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).data()[0].is_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| grads.get_or_zeros(*v, p.len()))
        .collect();

    let total: usize = params.iter().map(Tensor::len).sum();
    if total == 0 {
        return Err(Error::Contract("gradient check without parameters".into()));
    }
    let mut rng = seeds::rng_for(seed, 0x6C, 0);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        probes: probe_count,
        worst: None,
    };
    for _ in 0..probe_count {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= params[which].len() {
            flat -= params[which].len();
            which += 1;
        }
        let original = work[which].data()[flat];
        work[which].data_mut()[flat] = original + STEP;
        let plus = evaluate(&work)?;
        work[which].data_mut()[flat] = original - STEP;
        let minus = evaluate(&work)?;
        work[which].data_mut()[flat] = original;

        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic[which][flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
        if rel >= report.max_relative_error {
            report.max_relative_error = rel;
            report.worst = Some((which, flat, a, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::NormMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squared_norm() {
        let w = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.parameter(w.clone());
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap(), &[2.0, 4.0]);

        let report = gradient_check(
            |t, p| {
                let sq = t.mul(p[0], p[0])?;
                Ok(t.sum(sq))
            },
            &[w],
            8,
            1,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
    }

    #[test]
    fn linear_tanh_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut r = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
        let params = vec![r(&[3, 4, 5]), r(&[5, 6]), r(&[6, 2])];
        let readout: Vec<f64> = r(&[3 * 4 * 2]).into_data();
        let report = gradient_check(
            |t, p| {
                let h = t.matmul(p[0], p[1])?;
                let h = t.tanh(h);
                let y = t.matmul(h, p[2])?;
                t.weighted_sum(y, &readout)
            },
            &params,
            60,
            2,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }

    #[test]
    fn every_primitive_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut r = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
        // q, k, v, gamma, beta, extra row, gate, readout
        let params = vec![
            r(&[2, 3, 8]),
            r(&[2, 4, 8]),
            r(&[2, 4, 8]),
            r(&[8]),
            r(&[8]),
            r(&[8]),
            r(&[16, 1]),
            r(&[2, 3, 4]),
        ];
        let mask = [true, false, true, true, true, true, false, true];
        let report = gradient_check(
            |t, p| {
                let att = t.attention(p[0], p[1], p[2], 2, 0.5, Some(&mask))?;
                let att = t.add_row(att, p[5], 0)?;
                let bn = t.batch_norm(att, p[3], p[4], NormMode::Train, None, 1e-5)?;
                let both = t.concat(bn, p[0])?;
                let gate = t.matmul(both, p[6])?;
                let gate = t.sigmoid(gate);
                let gated = t.mul_rows(bn, gate)?;
                let rel = t.relu(gated);
                let picked = t.gather_rows(rel, &[2, 0, 1, 1, 0, 2], 3)?;
                let scores = t.bmm_nt(picked, p[1])?;
                let scores = t.tanh(scores);
                let scores = t.scale(scores, 3.0);
                let scores = t.add(scores, p[7])?;
                let sel = t.select_batch(scores, &[1, 0, 1])?;
                let logit_mask = vec![true; 3 * 12];
                let lp = t.pick_log_softmax(sel, &logit_mask, &[0, 5, 11])?;
                let sm = t.softmax(scores)?;
                let m = t.mean(sm, 1)?;
                let a = t.weighted_sum(lp, &[0.3, -0.7, 1.1])?;
                let b = t.weighted_sum(m, &[1.0, -2.0, 0.5, 0.25, 3.0, -1.0, 2.0, 0.7])?;
                t.add(a, b)
            },
            &params,
            200,
            3,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");
    }
}
