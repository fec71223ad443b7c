//! Procedural moving-shapes clips: captions, ground-truth boxes, the clip
//! file format and the colour detector that scores grounding.
//!
//! cargo run --example synthetic_dataset -- /tmp/dav-data

use dav::camgen::{read_clip, read_meta, SynthConfig};
use dav::cli::harness::{read_dataset, synth_dataset, write_dataset};
use dav::cli::write_gif;
use dav::metrics::{detect_boxes, miou_ap50, DetectorConfig};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("dav-synthetic"));
    let cfg = SynthConfig {
        max_objects: 2,
        ..SynthConfig::default()
    };
    let clips = synth_dataset(6, 11, &cfg)?;
    write_dataset(&dir, &clips)?;
    write_gif(&dir.join("clip_0000.gif"), &clips[0].clip, 4)?;
    println!("wrote {} clips to {}", clips.len(), dir.display());

    for (i, c) in clips.iter().enumerate() {
        let det = detect_boxes(&c.clip, &c.colors, &DetectorConfig::default())?;
        let targets: Vec<_> = c.colors.iter().copied().zip(c.boxes.clone()).collect();
        let s = miou_ap50(&det, &targets)?;
        println!(
            "clip {i}: {:<42} detector vs generator boxes: mIoU {:.3}, AP50 {:.0}%",
            c.caption.words()[1..c.caption.len() - 1].join(" "),
            s.miou,
            s.ap50
        );
    }

    let first = dir.join("clip_0000.davvid");
    let back = read_clip(&first)?;
    let meta = read_meta(&first.with_extension("json"))?;
    println!(
        "\nreloaded {}: dims {:?}, caption {:?}, identical: {}",
        first.display(),
        back.dims(),
        meta.caption,
        back == clips[0].clip
    );
    println!("read_dataset sees {} clips", read_dataset(&dir)?.len());
    Ok(())
}
