//! Cube-grid accumulation of aligned (position, emotion) samples, heatmap
//! rendering, and tabular export.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::GridSpec;
use crate::stream::AlignedSample;

#[derive(Debug, Error)]
pub enum AffectError {
    #[error("z-layer {got} out of range (grid has {layers})")]
    SliceOutOfRange { got: usize, layers: usize },
    #[error("scale_px must be >= 1")]
    BadScale,
}

/// Per-cell tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub visits: u64,
    pub valence_sum: f64,
    pub dwell_seconds: f64,
}

impl GridCell {
    pub fn mean_valence(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.valence_sum / self.visits as f64
        }
    }
}

/// Dense cube grid accumulating visits, valence, and dwell time.
///
/// Single-writer: owned by the merger stage; rendering works on a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectGrid {
    spec: GridSpec,
    cells: Vec<GridCell>,
    last_timestamp: Option<f64>,
}

/// Which z content a heatmap shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceSpec {
    /// One z-layer by index.
    Layer(usize),
    /// Merge all z-layers by summing visits and valence sums.
    Flatten,
}

/// What quantity drives the colormap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapChannel {
    Valence,
    Occupancy,
}

/// Row-major RGB image.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl HeatmapImage {
    /// Binary PPM (P6) bytes: `P6\n<w> <h>\n255\n` then RGB triples,
    /// top row first.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

impl AffectGrid {
    pub fn new(spec: GridSpec) -> Self {
        let cells = vec![GridCell::default(); spec.cell_count()];
        Self {
            spec,
            cells,
            last_timestamp: None,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[2] * self.spec.dims[1] + idx[1]) * self.spec.dims[0] + idx[0]
    }

    pub fn cell(&self, idx: [usize; 3]) -> &GridCell {
        &self.cells[self.flat(idx)]
    }

    pub fn total_visits(&self) -> u64 {
        self.cells.iter().map(|c| c.visits).sum()
    }

    /// Indexed view of every visited cell, in (i, j, k) order.
    pub fn visited_cells(&self) -> Vec<([usize; 3], &GridCell)> {
        let mut out = Vec::new();
        for i in 0..self.spec.dims[0] {
            for j in 0..self.spec.dims[1] {
                for k in 0..self.spec.dims[2] {
                    let cell = self.cell([i, j, k]);
                    if cell.visits > 0 {
                        out.push(([i, j, k], cell));
                    }
                }
            }
        }
        out
    }

    /// Fold time-ordered samples into the grid. Returns how many fell
    /// outside the grid. Dwell time charges the gap since the previous
    /// sample (in or out of bounds) to the current sample's cell; the first
    /// sample of a session contributes zero dwell.
    pub fn accumulate(&mut self, samples: &[AlignedSample]) -> usize {
        let mut dropped = 0usize;
        for sample in samples {
            let gap = match self.last_timestamp {
                Some(prev) => (sample.timestamp - prev).max(0.0),
                None => 0.0,
            };
            self.last_timestamp = Some(sample.timestamp);
            match self.spec.cell_index(&sample.position) {
                Some(idx) => {
                    let flat = self.flat(idx);
                    let cell = &mut self.cells[flat];
                    cell.visits += 1;
                    cell.valence_sum += sample.emotion.valence;
                    cell.dwell_seconds += gap;
                }
                None => dropped += 1,
            }
        }
        dropped
    }

    /// Collapse every z-layer into one (dims.z = 1) by summing counts.
    pub fn flatten_z(&self) -> AffectGrid {
        let mut spec = self.spec.clone();
        spec.dims[2] = 1;
        let mut out = AffectGrid::new(spec);
        for i in 0..self.spec.dims[0] {
            for j in 0..self.spec.dims[1] {
                let mut merged = GridCell::default();
                for k in 0..self.spec.dims[2] {
                    let c = self.cell([i, j, k]);
                    merged.visits += c.visits;
                    merged.valence_sum += c.valence_sum;
                    merged.dwell_seconds += c.dwell_seconds;
                }
                let flat = out.flat([i, j, 0]);
                out.cells[flat] = merged;
            }
        }
        out.last_timestamp = self.last_timestamp;
        out
    }
}

/// Diverging valence colormap: -1 maps to blue (0,0,255), 0 to white,
/// +1 to red (255,0,0), linear on each half.
pub fn valence_color(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    let scale = |x: f64| (x * 255.0).round().clamp(0.0, 255.0) as u8;
    if v < 0.0 {
        [scale(1.0 + v), scale(1.0 + v), 255]
    } else {
        [255, scale(1.0 - v), scale(1.0 - v)]
    }
}

/// Occupancy colormap: white at zero through red at the maximum.
pub fn occupancy_color(fraction: f64) -> [u8; 3] {
    let f = fraction.clamp(0.0, 1.0);
    let scale = |x: f64| (x * 255.0).round().clamp(0.0, 255.0) as u8;
    [255, scale(1.0 - f), scale(1.0 - f)]
}

/// Gray sentinel for never-visited cells in the valence channel.
pub const UNVISITED_COLOR: [u8; 3] = [128, 128, 128];

/// Render one z-layer (or the z-flattened grid) as an RGB heatmap.
/// Image row 0 holds the max-y cells (north up); each cell becomes a
/// `scale_px` square block.
pub fn render_heatmap(
    grid: &AffectGrid,
    slice: SliceSpec,
    channel: HeatmapChannel,
    scale_px: usize,
) -> Result<HeatmapImage, AffectError> {
    if scale_px < 1 {
        return Err(AffectError::BadScale);
    }
    let (view, layer) = match slice {
        SliceSpec::Flatten => (Some(grid.flatten_z()), 0usize),
        SliceSpec::Layer(k) => {
            if k >= grid.spec.dims[2] {
                return Err(AffectError::SliceOutOfRange {
                    got: k,
                    layers: grid.spec.dims[2],
                });
            }
            (None, k)
        }
    };
    let grid = view.as_ref().unwrap_or(grid);

    let (nx, ny) = (grid.spec.dims[0], grid.spec.dims[1]);
    let max_visits = (0..nx)
        .flat_map(|i| (0..ny).map(move |j| (i, j)))
        .map(|(i, j)| grid.cell([i, j, layer]).visits)
        .max()
        .unwrap_or(0);

    let width = nx * scale_px;
    let height = ny * scale_px;
    let mut pixels = vec![0u8; width * height * 3];
    for j in 0..ny {
        for i in 0..nx {
            let cell = grid.cell([i, j, layer]);
            let color = match channel {
                HeatmapChannel::Valence => {
                    if cell.visits == 0 {
                        UNVISITED_COLOR
                    } else {
                        valence_color(cell.mean_valence())
                    }
                }
                HeatmapChannel::Occupancy => {
                    if max_visits == 0 {
                        occupancy_color(0.0)
                    } else {
                        occupancy_color(cell.visits as f64 / max_visits as f64)
                    }
                }
            };
            // Row 0 shows the top of the map: highest y index first.
            let row0 = (ny - 1 - j) * scale_px;
            for dy in 0..scale_px {
                for dx in 0..scale_px {
                    let px = (row0 + dy) * width + i * scale_px + dx;
                    pixels[px * 3..px * 3 + 3].copy_from_slice(&color);
                }
            }
        }
    }
    Ok(HeatmapImage {
        width,
        height,
        pixels,
    })
}

/// CSV of every visited cell, sorted by (i, j, k):
/// `i,j,k,visits,mean_valence,dwell_seconds`.
pub fn export_csv(grid: &AffectGrid) -> String {
    let mut out = String::from("i,j,k,visits,mean_valence,dwell_seconds\n");
    for (idx, cell) in grid.visited_cells() {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6}\n",
            idx[0],
            idx[1],
            idx[2],
            cell.visits,
            cell.mean_valence(),
            cell.dwell_seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eeg::EmotionSample;
    use crate::scene::{derive_grid, Aabb};
    use crate::Vec3;

    fn grid_2x1x1() -> AffectGrid {
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0));
        AffectGrid::new(derive_grid(&bounds, 1.0).unwrap())
    }

    fn sample(t: f64, x: f64, y: f64, z: f64, valence: f64) -> AlignedSample {
        // probs chosen so p_pos - p_neg == valence
        let p_pos = (1.0 + valence) / 2.0;
        let p_neg = (1.0 - valence) / 2.0;
        AlignedSample {
            timestamp: t,
            position: Vec3::new(x, y, z),
            emotion: EmotionSample::from_probs(t, [p_neg, 0.0, p_pos]).unwrap(),
        }
    }

    #[test]
    fn single_sample_updates_one_cell() {
        let mut grid = grid_2x1x1();
        let dropped = grid.accumulate(&[sample(0.0, 0.5, 0.5, 0.5, 1.0)]);
        assert_eq!(dropped, 0);
        let cell = grid.cell([0, 0, 0]);
        assert_eq!(cell.visits, 1);
        assert_eq!(cell.valence_sum, 1.0);
        assert_eq!(cell.dwell_seconds, 0.0);
    }

    #[test]
    fn mean_valence_of_two_samples() {
        let mut grid = grid_2x1x1();
        grid.accumulate(&[
            sample(0.0, 0.5, 0.5, 0.5, 1.0),
            sample(1.0, 0.5, 0.5, 0.5, 0.0),
        ]);
        let cell = grid.cell([0, 0, 0]);
        assert_eq!(cell.visits, 2);
        assert!((cell.mean_valence() - 0.5).abs() < 1e-12);
        assert!((cell.dwell_seconds - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_counted_not_stored() {
        let mut grid = grid_2x1x1();
        let dropped = grid.accumulate(&[sample(0.0, 5.0, 0.5, 0.5, 1.0)]);
        assert_eq!(dropped, 1);
        assert_eq!(grid.total_visits(), 0);
    }

    #[test]
    fn visits_plus_dropped_equals_samples() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(4.0, 4.0, 2.0));
        let mut grid = AffectGrid::new(derive_grid(&bounds, 0.5).unwrap());
        let samples: Vec<AlignedSample> = (0..500)
            .map(|i| {
                sample(
                    i as f64 * 0.1,
                    rng.gen_range(-1.0..5.0),
                    rng.gen_range(-1.0..5.0),
                    rng.gen_range(0.0..2.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let dropped = grid.accumulate(&samples);
        assert_eq!(grid.total_visits() as usize + dropped, samples.len());
    }

    #[test]
    fn accumulate_order_independent_for_counts() {
        let samples = vec![
            sample(0.0, 0.5, 0.5, 0.5, 1.0),
            sample(1.0, 1.5, 0.5, 0.5, -0.5),
            sample(2.0, 0.5, 0.5, 0.5, 0.25),
        ];
        let mut forward = grid_2x1x1();
        forward.accumulate(&samples);
        let mut reversed_samples = samples.clone();
        reversed_samples.reverse();
        // dwell is order-dependent by definition; compare visits/valence only
        let mut backward = grid_2x1x1();
        backward.last_timestamp = Some(f64::NEG_INFINITY);
        backward.accumulate(&reversed_samples);
        for i in 0..2 {
            let f = forward.cell([i, 0, 0]);
            let b = backward.cell([i, 0, 0]);
            assert_eq!(f.visits, b.visits);
            assert!((f.valence_sum - b.valence_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn colormap_endpoints_and_sentinel() {
        assert_eq!(valence_color(1.0), [255, 0, 0]);
        assert_eq!(valence_color(-1.0), [0, 0, 255]);
        assert_eq!(valence_color(0.0), [255, 255, 255]);
        assert_eq!(UNVISITED_COLOR, [128, 128, 128]);
        assert_eq!(occupancy_color(0.0), [255, 255, 255]);
        assert_eq!(occupancy_color(1.0), [255, 0, 0]);
    }

    #[test]
    fn colormap_monotone() {
        let mut prev = valence_color(-1.0);
        let mut v = -1.0;
        while v <= 1.0 {
            let c = valence_color(v);
            assert!(c[0] >= prev[0], "red must not decrease");
            assert!(c[2] <= prev[2], "blue must not increase");
            prev = c;
            v += 0.01;
        }
    }

    #[test]
    fn golden_two_cell_ppm() {
        let mut grid = grid_2x1x1();
        grid.accumulate(&[
            sample(0.0, 0.5, 0.5, 0.5, 1.0),
            sample(1.0, 1.5, 0.5, 0.5, -1.0),
        ]);
        let image = render_heatmap(&grid, SliceSpec::Layer(0), HeatmapChannel::Valence, 1).unwrap();
        let mut expected = b"P6\n2 1\n255\n".to_vec();
        expected.extend_from_slice(&[0xFF, 0x00, 0x00, 0x00, 0x00, 0xFF]);
        assert_eq!(image.to_ppm(), expected);
    }

    #[test]
    fn unvisited_cell_renders_gray() {
        let grid = grid_2x1x1();
        let image = render_heatmap(&grid, SliceSpec::Layer(0), HeatmapChannel::Valence, 1).unwrap();
        assert_eq!(&image.pixels[0..3], &UNVISITED_COLOR);
    }

    #[test]
    fn flatten_matches_premerged_render() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(3.0, 2.0, 2.0));
        let mut grid = AffectGrid::new(derive_grid(&bounds, 1.0).unwrap());
        let samples: Vec<AlignedSample> = (0..200)
            .map(|i| {
                sample(
                    i as f64 * 0.05,
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0.0..2.0),
                    rng.gen_range(0.0..2.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        grid.accumulate(&samples);

        let direct =
            render_heatmap(&grid, SliceSpec::Flatten, HeatmapChannel::Valence, 2).unwrap();
        let merged = grid.flatten_z();
        let oracle =
            render_heatmap(&merged, SliceSpec::Layer(0), HeatmapChannel::Valence, 2).unwrap();
        assert_eq!(direct, oracle);
    }

    #[test]
    fn slice_out_of_range_errors() {
        let grid = grid_2x1x1();
        assert!(matches!(
            render_heatmap(&grid, SliceSpec::Layer(7), HeatmapChannel::Valence, 1),
            Err(AffectError::SliceOutOfRange { got: 7, layers: 1 })
        ));
    }

    #[test]
    fn image_orientation_north_up() {
        // Grid 1x2: put +1 valence at high-y cell; it must land in row 0.
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 1.0));
        let mut grid = AffectGrid::new(derive_grid(&bounds, 1.0).unwrap());
        grid.accumulate(&[sample(0.0, 0.5, 1.5, 0.5, 1.0)]);
        let image = render_heatmap(&grid, SliceSpec::Layer(0), HeatmapChannel::Valence, 1).unwrap();
        assert_eq!(&image.pixels[0..3], &[255, 0, 0], "high-y cell in row 0");
        assert_eq!(&image.pixels[3..6], &UNVISITED_COLOR);
    }

    #[test]
    fn csv_export_format() {
        let mut grid = grid_2x1x1();
        assert_eq!(export_csv(&grid), "i,j,k,visits,mean_valence,dwell_seconds\n");

        grid.accumulate(&[
            sample(0.0, 0.5, 0.5, 0.5, 1.0),
            sample(2.0, 0.5, 0.5, 0.5, 0.0),
        ]);
        let csv = export_csv(&grid);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "0,0,0,2,0.500000,2.000000");
    }

    #[test]
    fn csv_row_count_matches_visited_cells() {
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(4.0, 4.0, 1.0));
        let mut grid = AffectGrid::new(derive_grid(&bounds, 1.0).unwrap());
        grid.accumulate(&[
            sample(0.0, 0.5, 0.5, 0.5, 1.0),
            sample(1.0, 2.5, 3.5, 0.5, -1.0),
            sample(2.0, 2.5, 3.5, 0.5, 0.5),
        ]);
        let csv = export_csv(&grid);
        assert_eq!(csv.lines().count() - 1, grid.visited_cells().len());
        assert_eq!(csv.lines().count() - 1, 2);
    }
}
