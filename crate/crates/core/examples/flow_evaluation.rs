//! Flow-error scoring: analytic flow of a camera, block-matching estimates
//! on augmented clips, and the normalized endpoint error between them.

use dav::camgen::{aug_with_cam_motion, gen_synthetic_clip, CameraParams, SynthConfig, SyntheticClipSpec};
use dav::metrics::{estimate_flow, flow_error, flow_search_radius, gt_flow_from_camera, FLOW_BLOCK};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let src = gen_synthetic_clip(&SyntheticClipSpec::random(&mut rng, &SynthConfig::default()))?;
    let cams = [(-0.5, 0.0, 1.0), (0.0, 0.0, 1.0), (0.5, 0.0, 1.0), (0.0, 0.3, 1.0), (0.0, 0.0, 1.5)];
    println!("{:>20} | {:>14} | {:>14} | {:>10} | {:>10}", "camera", "est. mean dx", "gt mean dx", "err (true)", "err (none)");
    for (cx, cy, cz) in cams {
        let cam = CameraParams::new(cx, cy, cz)?;
        let clip = aug_with_cam_motion(&src.clip, &cam, 16, 16)?;
        let est = estimate_flow(&clip, FLOW_BLOCK, flow_search_radius(16))?;
        let gt = gt_flow_from_camera(&cam, 8, 16, 16)?;
        let still = gt_flow_from_camera(&CameraParams::STATIC, 8, 16, 16)?;
        println!(
            "{:>20} | {:>14.3} | {:>14.3} | {:>10.4} | {:>10.4}",
            format!("({cx}, {cy}, {cz})"),
            est.flow.mean().0,
            gt.mean().0,
            flow_error(&est.flow, &gt)?,
            flow_error(&est.flow, &still)?
        );
    }
    Ok(())
}
