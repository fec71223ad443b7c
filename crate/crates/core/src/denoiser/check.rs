use std::cell::RefCell;

use super::model::{patchify, Conditioning, DenoiserModel};
use crate::diffkit::{finite_diff_check, ParamStore, Tape, Tensor};
use crate::Result;

/// Central-difference check of the denoiser's noise-prediction loss
/// `mse(eps_pred, target)` with respect to every parameter, in double
/// precision. Returns `(parameter name, worst relative error)` pairs.
///
/// Every coordinate is perturbed, so keep the model small.
pub fn model_gradcheck(
    model: &DenoiserModel,
    store: &ParamStore<f64>,
    x_t: &Tensor<f64>,
    t: usize,
    cond: &Conditioning<'_>,
    target: &Tensor<f64>,
) -> Result<Vec<(String, f64)>> {
    let target = patchify(target, model.config.patch)?;
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let probe = RefCell::new(store.clone());
        let f = |x: &Tensor<f64>| -> Result<(f64, Tensor<f64>)> {
            *probe.borrow_mut().value_mut(id) = x.clone();
            let probe = probe.borrow();
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &probe, x_t, t, cond)?;
            let loss = tape.mse(fwd.eps, &target)?;
            let grads = tape.backward(loss)?;
            let g = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
            Ok((tape.value(loss).data()[0], g))
        };
        let err = finite_diff_check(f, store.value(id), 1e-5)?;
        out.push((store.get(id).name.clone(), err));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::camgen::CameraParams;
    use crate::denoiser::DenoiserConfig;

    #[test]
    fn tiny_denoiser_gradients_match_central_differences() {
        let cfg = DenoiserConfig {
            frames: 2,
            height: 4,
            width: 4,
            patch: 2,
            dim: 8,
            heads: 2,
            blocks: 1,
            ffn_mult: 1,
            camera_freqs: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::<f64>::new();
        let model = DenoiserModel::init(cfg, &mut store, &mut rng).unwrap();
        // open the gates and the output layer so every path carries gradient
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.value_mut(id).data_mut() {
                if *v == 0.0 {
                    *v = rng.gen_range(-0.3..0.3);
                }
            }
        }
        let shape = model.config.clip_shape();
        let n: usize = shape.iter().product();
        let x = Tensor::new(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let target = Tensor::new(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let caption = [0, 6, 3, 2, 1];
        let cond = Conditioning {
            caption: &caption,
            camera: Some(CameraParams::new(0.3, -0.2, 1.2).unwrap()),
            modulation: None,
        };
        let report = model_gradcheck(&model, &store, &x, 700, &cond, &target).unwrap();
        assert_eq!(report.len(), store.len());
        for (name, err) in report {
            assert!(err < 1e-3, "{name}: {err}");
        }
    }
}
