use dav::camgen::{compute_crop_boxes, sample_camera_params, CameraParams};
use dav::caption::Caption;
use dav::cli::{parse_scene_str, SceneObject, SceneSpec};
use dav::diffkit::{scaled_dot_attention, Tensor};
use dav::geometry::BBox;
use dav::object_control::{build_box_trajectory, modulation_term, ModulationSpec, Placement};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn camera() -> impl Strategy<Value = CameraParams> {
    (-1.0..=1.0f64, -1.0..=1.0f64, 0.5..=2.0f64).prop_map(|(x, y, z)| CameraParams::new(x, y, z).unwrap())
}

fn unit_box() -> impl Strategy<Value = BBox> {
    (0.0..0.7f64, 0.0..0.7f64, 0.1..0.3f64, 0.1..0.3f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crop_windows_are_valid_after_normalization(cam in camera(), frames in 2usize..16) {
        let seq = compute_crop_boxes(&cam, frames).unwrap();
        prop_assert_eq!(seq.len(), frames);
        for b in &seq.normalized {
            prop_assert!(b.x1 < b.x2 && b.y1 < b.y2);
            for v in [b.x1, b.y1, b.x2, b.y2] {
                prop_assert!((0.0..=1.0).contains(&v), "{:?}", b);
            }
        }
    }

    #[test]
    fn sampled_cameras_are_in_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..32 {
            prop_assert!(sample_camera_params(&mut rng).validate().is_ok());
        }
    }

    #[test]
    fn modulated_attention_rows_are_distributions(
        b in unit_box(),
        lambda in 0.0..60.0f64,
        t in 0usize..=1000,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let (h, w, l, d) = (6, 6, 5, 4);
        let spec = ModulationSpec {
            lambda,
            tau: 0.9,
            objects: vec![build_box_trajectory(vec![1, 2], b, b, &[b.center()], 2).unwrap()],
            background_token: Some(3),
            placement: Placement::ALL,
        };
        let s = modulation_term(&spec, 0, t, 1000, h, w, l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
        };
        let (q, k) = (rand_t(&[h * w, d]), rand_t(&[l, d]));
        // identity values expose the attention weights themselves
        let mut eye = vec![0.0; l * l];
        for j in 0..l {
            eye[j * l + j] = 1.0;
        }
        let v = Tensor::new(&[l, l], eye).unwrap();
        let bias = Tensor::new(s.shape(), s.data().iter().map(|&x| if x.is_infinite() { x } else { lambda * x }).collect()).unwrap();
        let p = scaled_dot_attention(&q, &k, &v, Some(&bias)).unwrap();
        for (row, srow) in p.data().chunks(l).zip(s.data().chunks(l)) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (&pv, &sv) in row.iter().zip(srow) {
                if sv == f64::NEG_INFINITY {
                    prop_assert_eq!(pv, 0.0);
                }
            }
        }
    }

    #[test]
    fn scene_text_round_trips(
        cam in camera(),
        lambda in 0.0..100.0f64,
        tau in 0.0..=1.0f64,
        seed in any::<u32>(),
        guidance in 0.0..15.0f64,
        b in unit_box(),
        e in unit_box(),
        with_object in any::<bool>(),
    ) {
        let caption = Caption::parse("green triangle background").unwrap();
        let mut spec = SceneSpec::minimal(&caption);
        spec.camera = cam;
        spec.modulation.lambda = lambda;
        spec.modulation.tau = tau;
        spec.sampler.seed = u64::from(seed);
        spec.sampler.guidance = guidance;
        if with_object {
            spec.objects.push(SceneObject {
                words: vec!["green".into(), "triangle".into()],
                start: b,
                end: e,
                track: vec![b.center(), e.center()],
            });
        }
        let text = spec.to_scene_string();
        let back = parse_scene_str(&text).unwrap();
        prop_assert_eq!(&back, &spec);
        prop_assert_eq!(back.to_scene_string(), text);
    }
}
