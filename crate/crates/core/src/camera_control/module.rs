use rand::Rng;

use crate::diffkit::nn::Linear;
use crate::diffkit::{ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Gated temporal cross-attention from frame features to the two camera
/// slots.
///
/// Pan and zoom slots have their own key/value projections; the keys and
/// values are concatenated along the sequence axis before attention.
#[derive(Clone, Debug)]
pub struct CameraModule {
    pub query: Linear,
    pub key_xy: Linear,
    pub value_xy: Linear,
    pub key_z: Linear,
    pub value_z: Linear,
    pub out: Linear,
    /// Gate scalar, initialised to exactly 0.
    pub alpha: ParamId,
    pub heads: usize,
}

impl CameraModule {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let lin = |store: &mut ParamStore<T>, part: &str, bias: bool, rng: &mut R| {
            Linear::init(store, &format!("{name}.{part}"), dim, dim, bias, 1.0, rng)
        };
        Ok(Self {
            query: lin(store, "q", false, rng)?,
            key_xy: lin(store, "k_xy", false, rng)?,
            value_xy: lin(store, "v_xy", false, rng)?,
            key_z: lin(store, "k_z", false, rng)?,
            value_z: lin(store, "v_z", false, rng)?,
            out: lin(store, "out", true, rng)?,
            alpha: store.add(format!("{name}.alpha"), Tensor::zeros(&[1]))?,
            heads,
        })
    }
}

/// `F + tanh(α) · Attn(F·Wq, [e_xy·Wk_xy; e_z·Wk_z], [e_xy·Wv_xy; e_z·Wv_z])·Wo`.
///
/// `features` is `[frames, tokens, dim]` (or any shape ending in `dim`);
/// `e_xy`, `e_z` are `[1, dim]`. Every frame-token query attends to the
/// same two camera slots, so attention along the temporal axis per spatial
/// location reduces to one batched attention over all queries.
pub fn camera_module_forward<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    module: &CameraModule,
    features: Var,
    e_xy: Var,
    e_z: Var,
) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    let dim = *shape.last().unwrap();
    if dim != module.query.din || tape.shape(e_xy) != [1, dim] || tape.shape(e_z) != [1, dim] {
        return Err(Error::shape(
            "camera_module_forward",
            format!(
                "features {shape:?}, e_xy {:?}, e_z {:?}, module width {}",
                tape.shape(e_xy),
                tape.shape(e_z),
                module.query.din
            ),
        ));
    }
    let rows = tape.value(features).len() / dim;
    let flat = tape.reshape(features, &[1, rows, dim])?;
    let q = module.query.forward(tape, store, flat)?;
    let k_xy = module.key_xy.forward(tape, store, e_xy)?;
    let k_z = module.key_z.forward(tape, store, e_z)?;
    let v_xy = module.value_xy.forward(tape, store, e_xy)?;
    let v_z = module.value_z.forward(tape, store, e_z)?;
    let k = tape.concat0(&[k_xy, k_z])?;
    let v = tape.concat0(&[v_xy, v_z])?;
    let k = tape.reshape(k, &[1, 2, dim])?;
    let v = tape.reshape(v, &[1, 2, dim])?;
    let attn = tape.attention(q, k, v, module.heads, None)?;
    let proj = module.out.forward(tape, store, attn)?;
    let proj = tape.reshape(proj, &shape)?;
    let alpha = tape.param(store, module.alpha);
    let gate = tape.tanh(alpha);
    let gated = tape.mul_scalar(proj, gate)?;
    tape.add(features, gated)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn setup(dim: usize, heads: usize) -> (ParamStore<f64>, CameraModule) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let m = CameraModule::init(&mut store, "cam", dim, heads, &mut rng).unwrap();
        (store, m)
    }

    fn run(store: &ParamStore<f64>, m: &CameraModule, f: &Tensor<f64>, exy: &[f64], ez: &[f64]) -> Tensor<f64> {
        let d = exy.len();
        let mut tape = Tape::new();
        let fv = tape.constant(f.clone());
        let a = tape.constant(Tensor::from_f64(&[1, d], exy).unwrap());
        let b = tape.constant(Tensor::from_f64(&[1, d], ez).unwrap());
        let out = camera_module_forward(&mut tape, store, m, fv, a, b).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn zero_gate_is_exact_identity() {
        let (store, m) = setup(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Tensor::new(&[3, 4, 8], (0..96).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let out = run(&store, &m, &f, &[0.3; 8], &[-0.7; 8]);
        assert_eq!(out, f);
    }

    #[test]
    fn saturated_gate_with_equal_logits_adds_value_mean() {
        let (mut store, m) = setup(2, 1);
        let eye = Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap();
        *store.value_mut(m.query.weight) = Tensor::zeros(&[2, 2]);
        for l in [m.value_xy, m.value_z, m.out] {
            *store.value_mut(l.weight) = eye.clone();
        }
        *store.value_mut(m.alpha) = Tensor::scalar(40.0);
        let f = Tensor::from_f64(&[2, 1, 2], &[0.5, -1.0, 2.0, 0.25]).unwrap();
        let out = run(&store, &m, &f, &[1.0, 3.0], &[-2.0, 5.0]);
        let mean = [-0.5, 4.0];
        for (i, &v) in out.data().iter().enumerate() {
            assert!((v - f.data()[i] - mean[i % 2]).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_hand_evaluation() {
        // one spatial token, two frames, width 2, one head
        let (mut store, m) = setup(2, 1);
        let set = |store: &mut ParamStore<f64>, id, v: [f64; 4]| {
            *store.value_mut(id) = Tensor::from_f64(&[2, 2], &v).unwrap();
        };
        let wq = [0.5, -0.2, 0.1, 0.3];
        let wkxy = [0.4, 0.0, -0.3, 0.2];
        let wkz = [-0.1, 0.6, 0.2, -0.5];
        let wvxy = [1.0, 0.2, -0.4, 0.7];
        let wvz = [0.3, -0.8, 0.5, 0.1];
        let wo = [0.9, -0.1, 0.2, 1.1];
        set(&mut store, m.query.weight, wq);
        set(&mut store, m.key_xy.weight, wkxy);
        set(&mut store, m.key_z.weight, wkz);
        set(&mut store, m.value_xy.weight, wvxy);
        set(&mut store, m.value_z.weight, wvz);
        set(&mut store, m.out.weight, wo);
        *store.value_mut(m.out.bias.unwrap()) = Tensor::from_f64(&[2], &[0.05, -0.02]).unwrap();
        let alpha = 0.7f64;
        *store.value_mut(m.alpha) = Tensor::scalar(alpha);
        let frames = [[0.8, -0.6], [-0.3, 1.2]];
        let (exy, ez) = ([0.9, -0.4], [0.2, 0.6]);

        // row vector times [in, out] matrix stored row-major
        let vm = |x: [f64; 2], w: [f64; 4]| [x[0] * w[0] + x[1] * w[2], x[0] * w[1] + x[1] * w[3]];
        let (kxy, kz) = (vm(exy, wkxy), vm(ez, wkz));
        let (vxy, vz) = (vm(exy, wvxy), vm(ez, wvz));
        let mut expected = Vec::new();
        for f in frames {
            let q = vm(f, wq);
            let s1 = (q[0] * kxy[0] + q[1] * kxy[1]) / 2f64.sqrt();
            let s2 = (q[0] * kz[0] + q[1] * kz[1]) / 2f64.sqrt();
            let (e1, e2) = (s1.exp(), s2.exp());
            let (p1, p2) = (e1 / (e1 + e2), e2 / (e1 + e2));
            let a = [p1 * vxy[0] + p2 * vz[0], p1 * vxy[1] + p2 * vz[1]];
            let o = vm(a, wo);
            let g = alpha.tanh();
            expected.push(f[0] + g * (o[0] + 0.05));
            expected.push(f[1] + g * (o[1] - 0.02));
        }
        let ft = Tensor::from_f64(&[2, 1, 2], &[0.8, -0.6, -0.3, 1.2]).unwrap();
        let out = run(&store, &m, &ft, &exy, &ez);
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{out:?} vs {expected:?}");
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let (store, m) = setup(4, 1);
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::zeros(&[2, 3, 5]));
        let e = tape.constant(Tensor::zeros(&[1, 4]));
        assert!(camera_module_forward(&mut tape, &store, &m, f, e, e).is_err());
    }
}
