//! Central finite-difference checks of tape primitives and of a whole
//! (tiny) denoiser, in double precision.

use dav::camgen::CameraParams;
use dav::denoiser::{model_gradcheck, Conditioning, DenoiserConfig, DenoiserModel};
use dav::diffkit::{finite_diff_check, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // softmax attention with a suppressed key, gradient wrt the queries
    let (k, v) = (random(&mut rng, &[5, 8]), random(&mut rng, &[5, 4]));
    let mut bias = random(&mut rng, &[4, 5]);
    bias.data_mut()[2] = f64::NEG_INFINITY;
    let q0 = random(&mut rng, &[4, 8]);
    let err = finite_diff_check(
        |q| {
            let mut tape = Tape::new();
            let qv = tape.input(q.clone(), true);
            let (kv, vv) = (tape.constant(k.clone()), tape.constant(v.clone()));
            let out = tape.attention(qv, kv, vv, 2, Some(&bias))?;
            let sq = tape.mul(out, out)?;
            let loss = tape.sum(sq);
            let g = tape.backward(loss)?;
            Ok((tape.value(loss).data()[0], g.wrt(qv).unwrap().clone()))
        },
        &q0,
        1e-5,
    )?;
    println!("attention (2 heads, one -inf bias): max relative error {err:.2e}");

    // layer norm, gradient wrt the input
    let (gain, shift) = (random(&mut rng, &[6]), random(&mut rng, &[6]));
    let err = finite_diff_check(
        |x| {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone(), true);
            let (g, b) = (tape.constant(gain.clone()), tape.constant(shift.clone()));
            let y = tape.layer_norm(xv, g, b, 1e-5)?;
            let y = tape.gelu(y);
            let sq = tape.mul(y, y)?;
            let loss = tape.sum(sq);
            let grads = tape.backward(loss)?;
            Ok((tape.value(loss).data()[0], grads.wrt(xv).unwrap().clone()))
        },
        &random(&mut rng, &[3, 6]),
        1e-5,
    )?;
    println!("layer norm → gelu: max relative error {err:.2e}");

    // the full denoiser, every parameter
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
    let mut store = ParamStore::<f64>::new();
    let model = DenoiserModel::init(cfg, &mut store, &mut rng)?;
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            if *v == 0.0 {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    let shape = model.config.clip_shape();
    let (x, target) = (random(&mut rng, &shape), random(&mut rng, &shape));
    let caption = [0, 6, 3, 2, 1];
    let cond = Conditioning {
        caption: &caption,
        camera: Some(CameraParams::new(0.3, -0.2, 1.2)?),
        modulation: None,
    };
    let report = model_gradcheck(&model, &store, &x, 700, &cond, &target)?;
    let worst = report.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    println!(
        "denoiser: {} parameters checked, worst {} at {:.2e}",
        report.len(),
        worst.0,
        worst.1
    );
    Ok(())
}
