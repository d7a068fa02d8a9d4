//! Static world description: floor bounds, obstacles, anchor layout, and the
//! analytics grid geometry derived from them.
//!
//! Everything here is immutable after load and safe to share read-only across
//! pipeline stages.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

/// Default analytics-grid cell edge in meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.5;

/// Ratio of smallest to largest singular value below which an anchor layout
/// counts as degenerate (collinear in 2D, coplanar in 3D).
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

/// Solve dimensionality. 2D solves work in the xy-plane; z is fixed to the
/// carried-tag height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "2d")]
    Two,
    #[serde(rename = "3d")]
    Three,
}

impl Dimension {
    pub fn axes(self) -> usize {
        match self {
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scene JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid {field}: bounds min must be < max componentwise")]
    InvertedBounds { field: String },
    #[error("obstacle {index} outside bounds")]
    ObstacleOutsideBounds { index: usize },
    #[error("duplicate anchor id {id:?}")]
    DuplicateAnchorId { id: String },
    #[error("point cloud is empty")]
    EmptyPointCloud,
    #[error("point cloud line {line}: expected 3 numeric fields, got {found:?}")]
    BadPointLine { line: usize, found: String },
    #[error("cell_size must be positive, got {0}")]
    NonPositiveCellSize(f64),
    #[error("degenerate bounds: axis {axis} extent {extent} is not positive")]
    DegenerateBounds { axis: usize, extent: f64 },
    #[error("need at least {need} anchors for {dim}D geometry, got {got}")]
    TooFewAnchors { need: usize, got: usize, dim: usize },
}

/// Axis-aligned box, min/max corners in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] < self.max[i])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Segment/box overlap via the slab method. Touching a face counts as
    /// an intersection.
    pub fn intersects_segment(&self, a: &Vec3, b: &Vec3) -> bool {
        let dir = b - a;
        let mut t_min = 0.0f64;
        let mut t_max = 1.0f64;
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if a[i] < self.min[i] || a[i] > self.max[i] {
                    return false;
                }
            } else {
                let inv = 1.0 / dir[i];
                let mut t0 = (self.min[i] - a[i]) * inv;
                let mut t1 = (self.max[i] - a[i]) * inv;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                t_min = t_min.max(t0);
                t_max = t_max.min(t1);
                if t_min > t_max {
                    return false;
                }
            }
        }
        true
    }
}

/// Floor bounds plus axis-aligned obstacle boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub bounds: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
}

impl FloorPlan {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.bounds.is_valid() {
            return Err(SceneError::InvertedBounds {
                field: "bounds".into(),
            });
        }
        for (index, obstacle) in self.obstacles.iter().enumerate() {
            if !obstacle.is_valid() {
                return Err(SceneError::InvertedBounds {
                    field: format!("obstacles[{index}]"),
                });
            }
            if !self.bounds.contains_box(obstacle) {
                return Err(SceneError::ObstacleOutsideBounds { index });
            }
        }
        Ok(())
    }
}

/// One fixed ranging anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: String,
    #[serde(rename = "pos")]
    pub position: Vec3,
}

/// Ordered set of anchors with unique ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnchorSet {
    anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn new(anchors: Vec<Anchor>) -> Result<Self, SceneError> {
        let mut seen = std::collections::BTreeSet::new();
        for anchor in &anchors {
            if !seen.insert(anchor.id.clone()) {
                return Err(SceneError::DuplicateAnchorId {
                    id: anchor.id.clone(),
                });
            }
        }
        Ok(Self { anchors })
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.anchors.iter().map(|a| a.position).collect()
    }

    pub fn position_of(&self, id: &str) -> Option<Vec3> {
        self.anchors.iter().find(|a| a.id == id).map(|a| a.position)
    }

    pub fn ids(&self) -> Vec<String> {
        self.anchors.iter().map(|a| a.id.clone()).collect()
    }
}

/// Cube-grid geometry: origin corner, cell edge, and cell counts per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec3,
    pub cell_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Cell index of a point, or `None` when it falls outside the grid.
    /// Points on the max face of the last cell are accepted.
    pub fn cell_index(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for axis in 0..3 {
            let offset = (p[axis] - self.origin[axis]) / self.cell_size;
            if offset < 0.0 {
                return None;
            }
            let mut i = offset.floor() as usize;
            // The grid covers origin + dims*cell_size inclusive of the far face.
            if i == self.dims[axis] && offset <= self.dims[axis] as f64 {
                i -= 1;
            }
            if i >= self.dims[axis] {
                return None;
            }
            idx[axis] = i;
        }
        Some(idx)
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

/// Full contents of a scene file: floor plan, anchors, grid cell size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    #[serde(flatten)]
    pub floorplan: FloorPlan,
    #[serde(default = "AnchorSet::empty")]
    pub anchors: AnchorSet,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
}

impl AnchorSet {
    fn empty() -> Self {
        Self {
            anchors: Vec::new(),
        }
    }
}

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE
}

impl Scene {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let scene: Scene = serde_json::from_str(&text)?;
        scene.floorplan.validate()?;
        // Re-run the uniqueness check: serde bypasses AnchorSet::new.
        AnchorSet::new(scene.anchors.anchors.clone())?;
        if scene.cell_size <= 0.0 {
            return Err(SceneError::NonPositiveCellSize(scene.cell_size));
        }
        Ok(scene)
    }

    pub fn grid(&self) -> Result<GridSpec, SceneError> {
        derive_grid(&self.floorplan.bounds, self.cell_size)
    }
}

/// Load just the floor plan from a scene file.
pub fn load_floorplan(path: impl AsRef<Path>) -> Result<FloorPlan, SceneError> {
    Ok(Scene::load(path)?.floorplan)
}

/// Bounding box of a whitespace-separated `x y z` point file.
pub fn load_pointcloud(path: impl AsRef<Path>) -> Result<Aabb, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut min = Vec3::from_element(f64::INFINITY);
    let mut max = Vec3::from_element(f64::NEG_INFINITY);
    let mut count = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed {
            Some(values) if values.len() == 3 => {
                for axis in 0..3 {
                    min[axis] = min[axis].min(values[axis]);
                    max[axis] = max[axis].max(values[axis]);
                }
                count += 1;
            }
            _ => {
                return Err(SceneError::BadPointLine {
                    line: line_no + 1,
                    found: trimmed.to_string(),
                })
            }
        }
    }
    if count == 0 {
        return Err(SceneError::EmptyPointCloud);
    }
    Ok(Aabb { min, max })
}

/// Grid that covers `bounds` with cubes of edge `cell_size`.
///
/// Cell counts round up, so the far row of cells may extend past the bounds.
pub fn derive_grid(bounds: &Aabb, cell_size: f64) -> Result<GridSpec, SceneError> {
    if cell_size <= 0.0 || !cell_size.is_finite() {
        return Err(SceneError::NonPositiveCellSize(cell_size));
    }
    let mut dims = [0usize; 3];
    for axis in 0..3 {
        let extent = bounds.max[axis] - bounds.min[axis];
        if extent <= 0.0 {
            return Err(SceneError::DegenerateBounds { axis, extent });
        }
        // Epsilon guard so exact multiples of cell_size don't gain a cell
        // to float rounding (e.g. 6.0 / 0.1 = 60.000000000000007).
        dims[axis] = ((extent / cell_size) - 1e-9).ceil().max(1.0) as usize;
    }
    Ok(GridSpec {
        origin: bounds.min,
        cell_size,
        dims,
    })
}

/// Result of an anchor-layout conditioning check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryCheck {
    Ok,
    /// Collinear (2D) or coplanar (3D) within [`DEGENERACY_TOLERANCE`].
    Degenerate,
}

/// Classify anchor geometry for the requested solve dimension.
///
/// Uses the singular values of the centered anchor coordinates: a vanishing
/// smallest-to-largest ratio means the anchors span fewer dimensions than
/// the solve needs.
pub fn validate_anchor_geometry(
    anchors: &AnchorSet,
    dimension: Dimension,
) -> Result<GeometryCheck, SceneError> {
    let axes = dimension.axes();
    let n = anchors.len();
    if n < axes + 1 {
        return Err(SceneError::TooFewAnchors {
            need: axes + 1,
            got: n,
            dim: axes,
        });
    }
    let positions = anchors.positions();
    let mut centroid = vec![0.0; axes];
    for p in &positions {
        for (axis, c) in centroid.iter_mut().enumerate() {
            *c += p[axis];
        }
    }
    for c in centroid.iter_mut() {
        *c /= n as f64;
    }
    let centered = nalgebra::DMatrix::from_fn(n, axes, |row, col| {
        positions[row][col] - centroid[col]
    });
    let svd = centered.svd(false, false);
    let s_max = svd
        .singular_values
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    let s_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if s_max <= 0.0 || s_min / s_max < DEGENERACY_TOLERANCE {
        Ok(GeometryCheck::Degenerate)
    } else {
        Ok(GeometryCheck::Ok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn anchor(id: &str, x: f64, y: f64, z: f64) -> Anchor {
        Anchor {
            id: id.into(),
            position: Vec3::new(x, y, z),
        }
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_floorplan_basic() {
        let f = write_temp(
            r#"{"bounds":{"min":[0,0,0],"max":[10,5,3]},"obstacles":[],"anchors":[],"cell_size":0.5}"#,
        );
        let plan = load_floorplan(f.path()).unwrap();
        assert_eq!(plan.bounds.min, Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(plan.bounds.max, Vec3::new(10.0, 5.0, 3.0));
        assert!(plan.obstacles.is_empty());
    }

    #[test]
    fn load_floorplan_obstacle_outside_bounds() {
        let f = write_temp(
            r#"{"bounds":{"min":[0,0,0],"max":[10,5,3]},
               "obstacles":[{"min":[9,4,0],"max":[11,5,1]}]}"#,
        );
        let err = load_floorplan(f.path()).unwrap_err();
        assert!(err.to_string().contains("outside bounds"), "{err}");
    }

    #[test]
    fn load_floorplan_empty_file_is_parse_error() {
        let f = write_temp("");
        assert!(matches!(
            load_floorplan(f.path()),
            Err(SceneError::Parse(_))
        ));
    }

    #[test]
    fn load_floorplan_inverted_bounds() {
        let f = write_temp(r#"{"bounds":{"min":[10,0,0],"max":[0,5,3]}}"#);
        let err = load_floorplan(f.path()).unwrap_err();
        assert!(err.to_string().contains("bounds"), "{err}");
    }

    #[test]
    fn pointcloud_two_points() {
        let f = write_temp("0 0 0\n10 5 3\n");
        let bb = load_pointcloud(f.path()).unwrap();
        assert_eq!(bb.min, Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(bb.max, Vec3::new(10.0, 5.0, 3.0));
    }

    #[test]
    fn pointcloud_single_point_degenerate_box() {
        let f = write_temp("1 2 3\n");
        let bb = load_pointcloud(f.path()).unwrap();
        assert_eq!(bb.min, bb.max);
        assert_eq!(bb.min, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn pointcloud_bad_line_reports_line_number() {
        let f = write_temp("0 0 0\na b c\n");
        match load_pointcloud(f.path()) {
            Err(SceneError::BadPointLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected BadPointLine, got {other:?}"),
        }
    }

    #[test]
    fn pointcloud_empty_file() {
        let f = write_temp("\n\n");
        assert!(matches!(
            load_pointcloud(f.path()),
            Err(SceneError::EmptyPointCloud)
        ));
    }

    #[test]
    fn derive_grid_dims() {
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(10.0, 5.0, 3.0));
        let grid = derive_grid(&bounds, 0.5).unwrap();
        assert_eq!(grid.dims, [20, 10, 6]);
        assert_eq!(grid.origin, bounds.min);

        let unit = Aabb::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(derive_grid(&unit, 0.3).unwrap().dims, [4, 4, 4]);
    }

    #[test]
    fn derive_grid_rejects_bad_inputs() {
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(10.0, 5.0, 3.0));
        assert!(matches!(
            derive_grid(&bounds, 0.0),
            Err(SceneError::NonPositiveCellSize(_))
        ));
        let flat = Aabb::new(Vec3::zeros(), Vec3::new(10.0, 5.0, 0.0));
        assert!(matches!(
            derive_grid(&flat, 0.5),
            Err(SceneError::DegenerateBounds { axis: 2, .. })
        ));
    }

    #[test]
    fn derive_grid_exact_multiple_no_extra_cell() {
        let bounds = Aabb::new(Vec3::zeros(), Vec3::new(6.0, 6.0, 6.0));
        assert_eq!(derive_grid(&bounds, 0.1).unwrap().dims, [60, 60, 60]);
    }

    #[test]
    fn cell_index_covers_interior_lattice() {
        let bounds = Aabb::new(Vec3::new(-1.0, 0.0, 0.5), Vec3::new(4.0, 3.0, 2.9));
        let grid = derive_grid(&bounds, 0.5).unwrap();
        let steps = 7;
        for ix in 0..=steps {
            for iy in 0..=steps {
                for iz in 0..=steps {
                    let frac = |i: usize| i as f64 / steps as f64;
                    let p = Vec3::new(
                        bounds.min.x + frac(ix) * (bounds.max.x - bounds.min.x),
                        bounds.min.y + frac(iy) * (bounds.max.y - bounds.min.y),
                        bounds.min.z + frac(iz) * (bounds.max.z - bounds.min.z),
                    );
                    let idx = grid.cell_index(&p).expect("interior point must map");
                    for axis in 0..3 {
                        assert!(idx[axis] < grid.dims[axis]);
                    }
                }
            }
        }
    }

    #[test]
    fn anchor_geometry_triangle_ok() {
        let set = AnchorSet::new(vec![
            anchor("a", 0.0, 0.0, 0.0),
            anchor("b", 4.0, 0.0, 0.0),
            anchor("c", 0.0, 4.0, 0.0),
        ])
        .unwrap();
        assert_eq!(
            validate_anchor_geometry(&set, Dimension::Two).unwrap(),
            GeometryCheck::Ok
        );
    }

    #[test]
    fn anchor_geometry_collinear_degenerate() {
        let set = AnchorSet::new(vec![
            anchor("a", 0.0, 0.0, 0.0),
            anchor("b", 1.0, 0.0, 0.0),
            anchor("c", 2.0, 0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(
            validate_anchor_geometry(&set, Dimension::Two).unwrap(),
            GeometryCheck::Degenerate
        );
    }

    #[test]
    fn anchor_geometry_too_few() {
        let set = AnchorSet::new(vec![anchor("a", 0.0, 0.0, 0.0), anchor("b", 1.0, 0.0, 0.0)])
            .unwrap();
        let err = validate_anchor_geometry(&set, Dimension::Two).unwrap_err();
        assert!(err.to_string().contains("at least 3"), "{err}");
    }

    #[test]
    fn anchor_geometry_coplanar_in_3d() {
        let set = AnchorSet::new(vec![
            anchor("a", 0.0, 0.0, 1.0),
            anchor("b", 4.0, 0.0, 1.0),
            anchor("c", 0.0, 4.0, 1.0),
            anchor("d", 4.0, 4.0, 1.0),
        ])
        .unwrap();
        assert_eq!(
            validate_anchor_geometry(&set, Dimension::Three).unwrap(),
            GeometryCheck::Degenerate
        );
    }

    #[test]
    fn anchor_geometry_rigid_invariance() {
        use nalgebra::Rotation3;
        let base = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(4.0, 0.0, 0.5),
            Vec3::new(0.0, 4.0, 2.0),
            Vec3::new(4.0, 4.0, 1.0),
            Vec3::new(2.0, 2.0, 3.0),
        ];
        let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let shift = Vec3::new(12.0, -3.0, 5.0);
        let make = |pts: &[Vec3]| {
            AnchorSet::new(
                pts.iter()
                    .enumerate()
                    .map(|(i, p)| Anchor {
                        id: format!("a{i}"),
                        position: *p,
                    })
                    .collect(),
            )
            .unwrap()
        };
        let moved: Vec<Vec3> = base.iter().map(|p| rot * p + shift).collect();
        for dim in [Dimension::Two, Dimension::Three] {
            assert_eq!(
                validate_anchor_geometry(&make(&base), dim).unwrap(),
                validate_anchor_geometry(&make(&moved), dim).unwrap(),
            );
        }
    }

    #[test]
    fn duplicate_anchor_ids_rejected() {
        let err = AnchorSet::new(vec![anchor("a", 0.0, 0.0, 0.0), anchor("a", 1.0, 0.0, 0.0)])
            .unwrap_err();
        assert!(matches!(err, SceneError::DuplicateAnchorId { .. }));
    }

    #[test]
    fn scene_load_full_schema() {
        let f = write_temp(
            r#"{"bounds":{"min":[0,0,0],"max":[10,8,3]},
                "obstacles":[{"min":[4,3,0],"max":[6,5,3]}],
                "anchors":[{"id":"A0","pos":[0.2,0.2,1.2]},{"id":"A1","pos":[9.8,0.2,1.2]}],
                "cell_size":0.5}"#,
        );
        let scene = Scene::load(f.path()).unwrap();
        assert_eq!(scene.anchors.len(), 2);
        assert_eq!(scene.cell_size, 0.5);
        assert_eq!(scene.grid().unwrap().dims, [20, 16, 6]);
        assert_eq!(
            scene.anchors.position_of("A1"),
            Some(Vec3::new(9.8, 0.2, 1.2))
        );
    }
}
