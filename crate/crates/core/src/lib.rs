//! Indoor user-sentiment mapping: localize a moving user from UWB-style
//! range measurements, classify emotional state from multichannel EEG,
//! time-align the two streams, and accumulate the result into a cube grid
//! for heatmaps and session reports.
//!
//! Modules follow the pipeline stages:
//!
//! - [`scene`] — floor bounds, obstacles, anchor layout, grid geometry
//! - [`locate`] — ToA/TDoA solvers, particle-filter tracker, GDOP
//! - [`eeg`] — filtering, STFT/EFDM, band features, change points, classifier
//! - [`stream`] — NDJSON wire format, clock offsets, dejitter, alignment
//! - [`affectmap`] — grid accumulation, heatmap rendering, CSV export
//! - [`sim`] — seeded ground-truth generators for hardware-free sessions
//! - [`report`] — session summaries, template and LLM narrative reports

pub mod affectmap;
pub mod eeg;
pub mod locate;
pub mod report;
pub mod scene;
pub mod sim;
pub mod stream;

/// 3-component position/offset vector in meters.
pub type Vec3 = nalgebra::Vector3<f64>;

#[cfg(test)]
mod smoke {
    use super::Vec3;

    #[test]
    fn vec3_serializes_as_flat_array() {
        let v = Vec3::new(1.0, 2.5, 3.0);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, "[1.0,2.5,3.0]");
        let back: Vec3 = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
