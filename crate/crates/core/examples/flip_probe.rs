//! Diagnose fused-worse-than-scan records in DG/DA.
use floc_core::detection::NoiseModel;
use floc_core::eval::trans_error;
use floc_core::likelihood::{ScanLikelihoodParams, VisionLikelihoodParams};
use floc_core::maps::build_distance_field;
use floc_core::mcl::{evaluate, map_estimate, sample_uniform, EvalInputs, Modality};
use floc_core::seeding::derive_seed;
use floc_core::simworld::{generate_random_pose_dataset, generate_world, ArchetypeKind, ArchetypeSpec, ScanSimConfig};
use floc_core::visibility::{CameraRig, OcclusionMode};

fn main() {
    let rig = CameraRig::default_three_camera();
    let noise = NoiseModel { drop_prob: 0.1, false_positive_prob: 0.02, confusion: Default::default(), seed: 0 };
    let scan_cfg = ScanSimConfig { range_noise_sigma: 0.01, ..Default::default() };
    let world_seed = derive_seed(5000, 3); // DG/DA of bench seed 0
    let spec = ArchetypeSpec::new(ArchetypeKind::DgDa, world_seed);
    let (map, grid) = generate_world(&spec).unwrap();
    let field = build_distance_field(&grid);
    let records = generate_random_pose_dataset(&map, &grid, &rig, &noise, &scan_cfg, 25, 1.0, derive_seed(world_seed, 1)).unwrap();
    for (i, record) in records.iter().enumerate() {
        let obs = record.observation(&map).unwrap();
        let scan = record.scan.to_observation().unwrap();
        let mut hyps = sample_uniform(&grid, 50_000, derive_seed(derive_seed(world_seed, 2), i as u64)).unwrap();
        let inputs = EvalInputs { map: &map, rig: &rig, occlusion: OcclusionMode::None, grid: Some(&grid), distance_field: Some(&field), vision_params: VisionLikelihoodParams::default(), scan_params: ScanLikelihoodParams::default() };
        evaluate(&mut hyps, Some(&obs), Some(&scan), &inputs).unwrap();
        let ev = trans_error(&map_estimate(&hyps, Modality::Vision).unwrap().pose, &record.pose_gt);
        let es = trans_error(&map_estimate(&hyps, Modality::Scan).unwrap().pose, &record.pose_gt);
        let ef = trans_error(&map_estimate(&hyps, Modality::Fused).unwrap().pose, &record.pose_gt);
        if ef > es + 0.3 {
            // inspect the flip
            let fused = hyps.fused_ll.as_ref().unwrap();
            let scan_ll = hyps.scan_ll.as_ref().unwrap();
            let vll = hyps.vision_ll.as_ref().unwrap();
            let scores = hyps.vision_score.as_ref().unwrap();
            let fmax = (0..fused.len()).max_by(|&a, &b| fused[a].partial_cmp(&fused[b]).unwrap()).unwrap();
            let smax = (0..fused.len()).max_by(|&a, &b| scan_ll[a].partial_cmp(&scan_ll[b]).unwrap()).unwrap();
            let obs_total: usize = obs.per_camera.iter().map(|s| s.len()).sum();
            println!("record {i}: ev={ev:.1} es={es:.2} ef={ef:.1} | obs labels {obs_total} | endpoints {}", scan.endpoints.len());
            println!("  fused-argmax: score={} vll={:.3} sll={:.1} (tempered {:.3})", scores[fmax], vll[fmax], scan_ll[fmax], scan_ll[fmax]/1500.0);
            println!("  scan-argmax:  score={} vll={:.3} sll={:.1} (tempered {:.3})", scores[smax], vll[smax], scan_ll[smax], scan_ll[smax]/1500.0);
        } else {
            println!("record {i}: ev={ev:.1} es={es:.2} ef={ef:.2} ok");
        }
    }
}
