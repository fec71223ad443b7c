use rand::Rng;

use crate::camgen::CameraParams;
use crate::diffkit::nn::Linear;
use crate::diffkit::{ParamStore, Real, Tape, Tensor, Var};
use crate::Result;

/// Frequencies per input component.
pub const NUM_FREQS: usize = 8;

/// Sin/cos features at frequencies `2^k`, `k = 0..num_freqs`, without a π
/// factor.
///
/// Layout per input component: `num_freqs` sines followed by `num_freqs`
/// cosines; components are concatenated in order. Output length is
/// `2 · num_freqs · v.len()`.
pub fn fourier_embed(v: &[f64], num_freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * num_freqs * v.len());
    for &x in v {
        let scaled: Vec<f64> = (0..num_freqs).map(|k| x * (1u64 << k) as f64).collect();
        out.extend(scaled.iter().map(|s| s.sin()));
        out.extend(scaled.iter().map(|s| s.cos()));
    }
    out
}

/// Two independent encoders: `MLP_xy` over the pan pair and `MLP_z` over the
/// zoom ratio. Each is affine → SiLU → affine into the model width.
#[derive(Clone, Debug)]
pub struct CameraEmbedder {
    pub xy_in: Linear,
    pub xy_out: Linear,
    pub z_in: Linear,
    pub z_out: Linear,
    pub num_freqs: usize,
}

/// Two-slot camera embedding `[e_xy, e_z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraEmbedding<T> {
    pub e_xy: Vec<T>,
    pub e_z: Vec<T>,
}

impl CameraEmbedder {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        num_freqs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            xy_in: Linear::init(store, &format!("{name}.xy.0"), 4 * num_freqs, dim, true, 1.0, rng)?,
            xy_out: Linear::init(store, &format!("{name}.xy.1"), dim, dim, true, 1.0, rng)?,
            z_in: Linear::init(store, &format!("{name}.z.0"), 2 * num_freqs, dim, true, 1.0, rng)?,
            z_out: Linear::init(store, &format!("{name}.z.1"), dim, dim, true, 1.0, rng)?,
            num_freqs,
        })
    }

    /// Records both encoders and returns `(e_xy, e_z)`, each `[1, dim]`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        params: &CameraParams,
    ) -> Result<(Var, Var)> {
        let enc = |tape: &mut Tape<T>, feats: Vec<f64>, l0: &Linear, l1: &Linear| -> Result<Var> {
            let n = feats.len();
            let x = tape.constant(Tensor::from_f64(&[1, n], &feats)?);
            let h = l0.forward(tape, store, x)?;
            let h = tape.silu(h);
            l1.forward(tape, store, h)
        };
        let e_xy = enc(
            tape,
            fourier_embed(&[params.cx, params.cy], self.num_freqs),
            &self.xy_in,
            &self.xy_out,
        )?;
        let e_z = enc(
            tape,
            fourier_embed(&[params.cz], self.num_freqs),
            &self.z_in,
            &self.z_out,
        )?;
        Ok((e_xy, e_z))
    }
}

/// Evaluates the embedder outside of any training tape.
pub fn embed_camera<T: Real>(
    params: &CameraParams,
    embedder: &CameraEmbedder,
    store: &ParamStore<T>,
) -> Result<CameraEmbedding<T>> {
    params.validate()?;
    let mut tape = Tape::new();
    let (xy, z) = embedder.forward(&mut tape, store, params)?;
    Ok(CameraEmbedding {
        e_xy: tape.value(xy).data().to_vec(),
        e_z: tape.value(z).data().to_vec(),
    })
}
