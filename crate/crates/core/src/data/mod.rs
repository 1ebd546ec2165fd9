//! Demonstration recording, command-bias filtering, lookahead label
//! construction, augmentation and dataset serialization.

mod augment;
mod dataset;
mod filter;
mod labels;
mod record;

pub use augment::augment;
pub use dataset::{load_dataset, save_dataset, DatasetManifest};
pub use filter::{filter_bias, fit_thresholds, FilterReport, FilterThresholds};
pub use labels::{build_lookahead_labels, TrainingSample};
pub use record::{
    load_demos, record_episode, record_plan, save_demos, standard_demo_plan, DemoEpisode,
    DemoFrame, DemoManifest, DemoSpec, EpisodeMeta, LeadSpec,
};

pub(crate) use filter::quantile;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::Result;

/// Full pipeline from raw demonstrations to training samples: threshold
/// fitting, bias filtering, lookahead labeling and augmentation. The same
/// seed yields an identical sample list.
pub fn build_dataset(
    episodes: &[DemoEpisode],
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Vec<TrainingSample>, FilterReport)> {
    let thresholds = fit_thresholds(episodes, cfg.data.ci)?;
    let (kept, report) = filter_bias(episodes.to_vec(), &thresholds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for ep in &kept {
        let base = build_lookahead_labels(ep, cfg.data.k_lookahead, cfg.data.spacing_m)?;
        for s in base {
            for _ in 0..cfg.data.aug.copies {
                samples.push(augment(&s, &cfg.world.scan, &cfg.data.aug, &mut rng));
            }
            samples.push(s);
        }
    }
    Ok((samples, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::build_test_maps;

    #[test]
    fn dataset_build_is_deterministic_and_filters_to_spec() {
        let mut cfg = RunConfig::default();
        cfg.expert.max_speed = 8.0; // reach the corner speeds quickly
        let (loop_map, _) = build_test_maps().unwrap();
        let route = crate::expert::route_from_edges(&loop_map, &[(0, true), (1, true)]).unwrap();
        let ep = DemoEpisode {
            name: "lap".into(),
            frames: record_episode(loop_map.clone(), &route, &cfg, 3, 0.0, 0.0, None, None).unwrap(),
        };
        let episodes = vec![ep];
        let (a, ra) = build_dataset(&episodes, &cfg, 11).unwrap();
        let (b, rb) = build_dataset(&episodes, &cfg, 11).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(ra.removed_frames, rb.removed_frames);
        // One augmented copy per base sample.
        assert_eq!(a.len() % 2, 0);
        assert!(a.len() > 1000, "only {} samples", a.len());
        let (c, _) = build_dataset(&episodes, &cfg, 12).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }
}
