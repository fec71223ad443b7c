//! Simulates pan and zoom on a stationary synthetic clip and checks the
//! motion against the analytic flow of the commanded camera.
//!
//! cargo run --example camera_augmentation -- 0.5,0,1

use dav::camgen::{aug_with_cam_motion, compute_crop_boxes, gen_synthetic_clip, SynthConfig, SyntheticClipSpec};
use dav::cli::parse_camera;
use dav::metrics::{estimate_flow, flow_error, gt_flow_from_camera, flow_search_radius, FLOW_BLOCK};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let cam = std::env::args()
        .nth(1)
        .map(|s| parse_camera(&s))
        .transpose()
        .map_err(anyhow::Error::msg)?
        .unwrap_or(dav::camgen::CameraParams { cx: 0.5, cy: 0.0, cz: 1.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let src = gen_synthetic_clip(&SyntheticClipSpec::random(&mut rng, &SynthConfig::default()))?;
    println!("source: {:?}, caption {:?}", src.clip.dims(), src.caption.words());

    let crops = compute_crop_boxes(&cam, src.clip.frames)?;
    println!("crop windows for camera ({}, {}, {}):", cam.cx, cam.cy, cam.cz);
    for (f, b) in crops.normalized.iter().enumerate() {
        println!("  frame {f}: [{:.3}, {:.3}, {:.3}, {:.3}]", b.x1, b.y1, b.x2, b.y2);
    }

    for size in [64, 32, 16] {
        let aug = aug_with_cam_motion(&src.clip, &cam, size, size)?;
        let est = estimate_flow(&aug, FLOW_BLOCK, flow_search_radius(size))?;
        let gt = gt_flow_from_camera(&cam, aug.frames, size, size)?;
        let (ex, ey) = est.flow.mean();
        let (gx, gy) = gt.mean();
        println!(
            "{size:>2}×{size:<2} estimated mean flow ({ex:+.3}, {ey:+.3}) px, analytic ({gx:+.3}, {gy:+.3}) px, error {:.4}",
            flow_error(&est.flow, &gt)?
        );
    }
    Ok(())
}
