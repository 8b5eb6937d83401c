//! Temporary diagnostic: per-archetype modality means for one benchmark seed.
use floc_core::detection::NoiseModel;
use floc_core::eval::trans_error;
use floc_core::likelihood::{ScanLikelihoodParams, VisionLikelihoodParams};
use floc_core::maps::build_distance_field;
use floc_core::mcl::{evaluate, map_estimate, sample_uniform, EvalInputs, Modality};
use floc_core::seeding::derive_seed;
use floc_core::simworld::{generate_random_pose_dataset, generate_world, ArchetypeKind, ArchetypeSpec, ScanSimConfig};
use floc_core::visibility::{CameraRig, OcclusionMode};

fn main() {
    let bench_seed: u64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let records_n: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(50);
    let hyps_n: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(100_000);
    let rig = CameraRig::default_three_camera();
    let noise = NoiseModel { drop_prob: 0.1, false_positive_prob: 0.02, confusion: Default::default(), seed: 0 };
    let scan_cfg = ScanSimConfig { range_noise_sigma: 0.01, ..Default::default() };

    for (k, kind) in ArchetypeKind::ALL.iter().enumerate() {
        let world_seed = derive_seed(5000 + bench_seed, k as u64);
        let spec = ArchetypeSpec::new(*kind, world_seed);
        let (map, grid) = generate_world(&spec).unwrap();
        let field = build_distance_field(&grid);
        let records = generate_random_pose_dataset(&map, &grid, &rig, &noise, &scan_cfg, records_n, 1.0, derive_seed(world_seed, 1)).unwrap();
        let mut sums = [0.0f64; 3];
        let mut worst = [0.0f64; 3];
        for (i, record) in records.iter().enumerate() {
            let obs = record.observation(&map).unwrap();
            let scan = record.scan.to_observation().unwrap();
            let mut hyps = sample_uniform(&grid, hyps_n, derive_seed(derive_seed(world_seed, 2), i as u64)).unwrap();
            let inputs = EvalInputs { map: &map, rig: &rig, occlusion: OcclusionMode::None, grid: Some(&grid), distance_field: Some(&field), vision_params: VisionLikelihoodParams::default(), scan_params: ScanLikelihoodParams::default() };
            evaluate(&mut hyps, Some(&obs), Some(&scan), &inputs).unwrap();
            for (m, modality) in [Modality::Vision, Modality::Scan, Modality::Fused].iter().enumerate() {
                let est = map_estimate(&hyps, *modality).unwrap();
                let e = trans_error(&est.pose, &record.pose_gt);
                sums[m] += e;
                if e > worst[m] { worst[m] = e; }
            }
        }
        let n = records.len() as f64;
        println!("{kind}: vision {:.2} (max {:.1}) scan {:.2} (max {:.1}) fused {:.2} (max {:.1})",
            sums[0]/n, worst[0], sums[1]/n, worst[1], sums[2]/n, worst[2]);
    }
}
