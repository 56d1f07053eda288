//! Central-finite-difference verification of the tape's backward rules.

use super::tape::{Id, ParamStore, Tape};

/// Compares the tape gradient of a scalar loss against central differences
/// over every parameter element, returning the maximum relative error.
///
/// `build` must construct the same computation each call from the given
/// store. Step size is 1e-5 scaled by the parameter magnitude; the relative
/// error denominator is floored so that near-zero gradients compare
/// absolutely.
pub fn grad_check<B>(params: &mut ParamStore<f64>, build: B) -> f64
where
    B: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Id,
{
    grad_check_sampled(params, build, usize::MAX)
}

/// `grad_check` limited to at most `max_per_param` evenly strided elements
/// of each parameter; large models are otherwise too slow to difference
/// exhaustively.
pub fn grad_check_sampled<B>(
    params: &mut ParamStore<f64>,
    mut build: B,
    max_per_param: usize,
) -> f64
where
    B: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Id,
{
    assert!(max_per_param > 0);
    let mut tape = Tape::new();
    let loss = build(&mut tape, params);
    let analytic = tape.backward(loss, params);

    let mut max_rel = 0.0f64;
    for p in 0..params.len() {
        let n = params.get(p).numel();
        let stride = n.div_ceil(max_per_param).max(1);
        for i in (0..n).step_by(stride) {
            let x = params.get(p).data[i];
            let h = 1e-5 * x.abs().max(1.0);
            params.get_mut(p).data[i] = x + h;
            let mut t1 = Tape::new();
            let l1 = build(&mut t1, params);
            let f1 = t1.value(l1).data[0];
            params.get_mut(p).data[i] = x - h;
            let mut t2 = Tape::new();
            let l2 = build(&mut t2, params);
            let f2 = t2.value(l2).data[0];
            params.get_mut(p).data[i] = x;
            let numeric = (f1 - f2) / (2.0 * h);
            let a = analytic[p].data[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::{mlp2_forward, mlp2_params, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_layer_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params: ParamStore<f64> = ParamStore::new();
        let w = params.add_kaiming("w", 3, 2, &mut rng);
        let b = params.add_zeros("b", &[2]);
        let err = grad_check(&mut params, |tape, store| {
            let x = tape.constant(Tensor::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.7, -0.3]));
            let wi = tape.param(store, w);
            let bi = tape.param(store, b);
            let y = tape.matmul(x, wi);
            let y = tape.add_row(y, bi);
            let sq = tape.mul(y, y);
            tape.sum_all(sq)
        });
        assert!(err <= 1e-8, "max rel err {err}");
    }

    #[test]
    fn every_op_composite_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params: ParamStore<f64> = ParamStore::new();
        let mlp = mlp2_params(&mut params, "mlp", (4, 6, 3), &mut rng);
        let conv_w = params.add_kaiming("cw", 2, 9, &mut rng);
        params.get_mut(conv_w).shape = vec![2, 1, 3, 3];
        let conv_b = params.add_zeros("cb", &[2]);
        let err = grad_check(&mut params, |tape, store| {
            // Image branch: conv, relu, pool, flatten.
            let img = tape.constant(Tensor::from_vec(
                &[1, 4, 4],
                (0..16).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect(),
            ));
            let cw = tape.param(store, conv_w);
            let cb = tape.param(store, conv_b);
            let c = tape.conv2d_3x3(img, cw, cb);
            let c = tape.relu(c);
            let p = tape.maxpool2d_3s2(c);
            let flat = tape.reshape(p, &[1, 8]);
            // Vector branch through the MLP plus softmax paths.
            let x = tape.constant(Tensor::from_vec(
                &[2, 4],
                vec![0.2, -0.4, 1.1, 0.9, -0.2, 0.5, 0.3, -1.3],
            ));
            let h = mlp2_forward(tape, store, &mlp, x);
            let sm = tape.softmax_rows(h);
            let lsm = tape.log_softmax_rows(h);
            let sg = tape.sigmoid(h);
            let ex = tape.exp(lsm);
            let prod = tape.mul(sm, ex);
            let both = tape.concat_cols(&[prod, sg]);
            let picked = tape.gather_rows(both, &[1, 0, 1]);
            let agg = tape.scatter_add_rows(picked, &[0, 1, 0], 2);
            let mr = tape.mean_rows(agg);
            let elems = tape.gather_elems(flat, &[0, 3, 5]);
            let half = tape.scalar_mul(elems, 0.5);
            let cl = tape.clamp(half, -0.8, 0.8);
            let mn = tape.min_elem(cl, half);
            let v1 = tape.mean_all(mn);
            let v2 = tape.mean_all(mr);
            let d = tape.sub(v1, v2);
            let s = tape.add(v1, v2);
            let prod2 = tape.mul(d, s);
            let m = tape.mse_loss(prod2, &[0.25]);
            let sig2 = tape.sigmoid(prod2);
            let bce = tape.bce_loss(sig2, &[1.0], &[1.0]);
            tape.add(m, bce)
        });
        assert!(err <= 1e-4, "max rel err {err}");
    }

    #[test]
    fn corrupted_rule_is_detected() {
        // A wrong derivative constructed on purpose: treat x^3 as if its
        // gradient were that of x^2 by building mismatched passes.
        let mut params: ParamStore<f64> = ParamStore::new();
        let p = params.add("x", Tensor::scalar(1.7));
        let mut toggle = 0u32;
        let err = grad_check(&mut params, |tape, store| {
            let x = tape.param(store, p);
            toggle += 1;
            if toggle == 1 {
                // Analytic pass sees x^2...
                tape.mul(x, x)
            } else {
                // ...numeric passes see x^2 + x.
                let sq = tape.mul(x, x);
                tape.add(sq, x)
            }
        });
        assert!(err > 1e-2, "corruption went undetected, err {err}");
    }
}
