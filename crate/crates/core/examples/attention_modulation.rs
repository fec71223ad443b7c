//! Box trajectories and the cross-attention modulation term: amplification
//! inside the box at early timesteps, exact suppression outside it.

use dav::diffkit::Tensor;
use dav::geometry::BBox;
use dav::object_control::{build_box_trajectory, modulated_cross_attention, modulation_term, ModulationSpec};

fn main() -> anyhow::Result<()> {
    // caption: <sos> red circle background <eos>
    let caption_len = 5;
    let start = BBox::new(0.0, 0.0, 0.5, 0.5);
    let end = BBox::new(0.5, 0.5, 1.0, 1.0);
    let traj = build_box_trajectory(vec![1, 2], start, end, &[(0.25, 0.25), (0.75, 0.25), (0.75, 0.75)], 5)?;
    println!("box centres along an L-shaped track:");
    for (k, b) in traj.boxes.iter().enumerate() {
        let (cx, cy) = b.center();
        println!("  frame {k}: ({cx:.3}, {cy:.3})");
    }

    let spec = ModulationSpec {
        objects: vec![traj],
        background_token: Some(3),
        ..Default::default()
    };
    let (h, w) = (4, 4);
    for t in [990, 500] {
        let s = modulation_term(&spec, 0, t, 1000, h, w, caption_len)?;
        println!("\nS for frame 0 at t = {t} (rows = query cells, columns = tokens):");
        for q in [0, 5, 10, 15] {
            let row: Vec<String> = (0..caption_len)
                .map(|c| {
                    let v = s.data()[q * caption_len + c];
                    if v == f64::NEG_INFINITY { "  -inf".into() } else { format!("{v:6.2}") }
                })
                .collect();
            println!("  cell {q:>2}: {}", row.join(" "));
        }
    }

    // one query in the box, uniform keys: weight on the bound token grows with λ
    let s = modulation_term(&spec, 0, 990, 1000, h, w, caption_len)?;
    let q = Tensor::<f64>::zeros(&[h * w, 4]);
    let k = Tensor::<f64>::zeros(&[caption_len, 4]);
    let v = Tensor::<f64>::new(&[caption_len, caption_len], (0..caption_len * caption_len).map(|i| (i % (caption_len + 1) == 0) as u8 as f64).collect())?;
    println!("\nweight of cell 0 on 'red' as λ grows:");
    for lambda in [0.0, 1.0, 2.0, 5.0] {
        let out = modulated_cross_attention(&q, &k, &v, &s, lambda)?;
        println!("  λ = {lambda:>3}: {:.4}", out.data()[1]);
    }
    Ok(())
}
