//! Voxel binning of a point cloud and the atrous neighbor arithmetic built
//! on top of it.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Integer cell coordinate `(i, j, k)`.
pub type Cell = [i64; 3];

/// Number of taps in the fixed 3x3x3 kernel.
pub const KERNEL_TAPS: usize = 27;

/// Default cell edge length in meters.
pub const DEFAULT_CELL_SIZE: f64 = 0.05;

/// A single point. Mostly used for construction; clouds are stored
/// column-wise in [`PointCloud`].
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub position: [f64; 3],
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

/// Ordered points with per-point features and optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    features: Tensor2D,
    labels: Vec<Option<usize>>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<[f64; 3]>,
        features: Tensor2D,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        if features.rows() != positions.len() || labels.len() != positions.len() {
            return Err(Error::Shape(format!(
                "{} positions, {} feature rows, {} labels",
                positions.len(),
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self {
            positions,
            features,
            labels,
        })
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        let rows: Vec<&[f64]> = points.iter().map(|p| p.features.as_slice()).collect();
        let features = if points.is_empty() {
            Tensor2D::zeros(0, 0)
        } else {
            Tensor2D::from_rows(&rows)?
        };
        Self::new(
            points.iter().map(|p| p.position).collect(),
            features,
            points.iter().map(|p| p.label).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn features(&self) -> &Tensor2D {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn point(&self, i: usize) -> Point {
        Point {
            position: self.positions[i],
            features: self.features.row(i).to_vec(),
            label: self.labels[i],
        }
    }

    /// Points reordered so that output point `i` is input point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            positions: order.iter().map(|&i| self.positions[i]).collect(),
            features: self.features.gather_rows(order),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Labels as plain ids, failing on the first unlabeled point.
    pub fn require_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::InvalidInput(format!("point {i} is unlabeled"))))
            .collect()
    }
}

/// Sparse voxel grid over a cloud with eagerly cached per-cell feature means.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    cell_size: f64,
    origin: [f64; 3],
    channels: usize,
    cells: BTreeMap<Cell, Vec<usize>>,
    cell_means: BTreeMap<Cell, Vec<f64>>,
    point_cells: Vec<Cell>,
}

/// Bins every point of `cloud` into cubic cells of edge `cell_size`.
///
/// The origin is the componentwise minimum of the positions, so the binning
/// is invariant to translating the whole cloud.
pub fn build_grid(cloud: &PointCloud, cell_size: f64) -> Result<VoxelGrid> {
    VoxelGrid::build(cloud.positions(), cloud.features(), cell_size)
}

/// Cell coordinates of `positions` relative to their componentwise minimum.
pub fn cell_coordinates(positions: &[[f64; 3]], cell_size: f64) -> Result<([f64; 3], Vec<Cell>)> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "cell size must be positive and finite, got {cell_size}"
        )));
    }
    for (i, p) in positions.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "point {i} has a non-finite coordinate {p:?}"
            )));
        }
    }
    let origin = if positions.is_empty() {
        [0.0; 3]
    } else {
        positions.iter().fold([f64::INFINITY; 3], |m, p| {
            [m[0].min(p[0]), m[1].min(p[1]), m[2].min(p[2])]
        })
    };
    let cells = positions
        .iter()
        .map(|p| {
            [
                ((p[0] - origin[0]) / cell_size).floor() as i64,
                ((p[1] - origin[1]) / cell_size).floor() as i64,
                ((p[2] - origin[2]) / cell_size).floor() as i64,
            ]
        })
        .collect();
    Ok((origin, cells))
}

impl VoxelGrid {
    pub fn build(positions: &[[f64; 3]], features: &Tensor2D, cell_size: f64) -> Result<Self> {
        if features.rows() != positions.len() {
            return Err(Error::Shape(format!(
                "{} positions but {} feature rows",
                positions.len(),
                features.rows()
            )));
        }
        let (origin, point_cells) = cell_coordinates(positions, cell_size)?;
        let mut cells: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
        for (i, c) in point_cells.iter().enumerate() {
            cells.entry(*c).or_default().push(i);
        }
        let channels = features.cols();
        let cell_means = cells
            .iter()
            .map(|(cell, members)| {
                let mut mean = vec![0.0; channels];
                for &m in members {
                    for (acc, v) in mean.iter_mut().zip(features.row(m)) {
                        *acc += v;
                    }
                }
                let inv = 1.0 / members.len() as f64;
                mean.iter_mut().for_each(|v| *v *= inv);
                (*cell, mean)
            })
            .collect();
        Ok(Self {
            cell_size,
            origin,
            channels,
            cells,
            cell_means,
            point_cells,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Occupied cells in ascending coordinate order with their member points.
    pub fn cells(&self) -> &BTreeMap<Cell, Vec<usize>> {
        &self.cells
    }

    pub fn point_cells(&self) -> &[Cell] {
        &self.point_cells
    }

    pub fn members(&self, cell: Cell) -> &[usize] {
        self.cells.get(&cell).map_or(&[], Vec::as_slice)
    }

    /// Mean feature vector of `cell`; the zero vector when the cell is empty.
    pub fn cell_mean(&self, cell: Cell) -> Vec<f64> {
        self.cell_means
            .get(&cell)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.channels])
    }
}

/// Canonical point order: by cell coordinate, then by position, then by
/// original index. Returns the permutation `order` such that sorted point
/// `i` is input point `order[i]`.
pub fn canonical_order(positions: &[[f64; 3]], cell_size: f64) -> Result<Vec<usize>> {
    let (_, cells) = cell_coordinates(positions, cell_size)?;
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| {
        cells[a]
            .cmp(&cells[b])
            .then_with(|| positions[a][0].total_cmp(&positions[b][0]))
            .then_with(|| positions[a][1].total_cmp(&positions[b][1]))
            .then_with(|| positions[a][2].total_cmp(&positions[b][2]))
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// The 27 kernel offsets `stride * (i, j, k)` for `i, j, k` in `{-1, 0, 1}`,
/// ordered lexicographically by `(i, j, k)`.
pub fn atrous_offsets(stride: usize) -> Result<[Cell; KERNEL_TAPS]> {
    if stride < 1 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let s = stride as i64;
    let mut out = [[0i64; 3]; KERNEL_TAPS];
    let mut t = 0;
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                out[t] = [s * i, s * j, s * k];
                t += 1;
            }
        }
    }
    Ok(out)
}

/// Index of tap `(i, j, k)` in the canonical offset order.
pub fn tap_index(i: i64, j: i64, k: i64) -> usize {
    debug_assert!([i, j, k].iter().all(|v| (-1..=1).contains(v)));
    ((i + 1) * 9 + (j + 1) * 3 + (k + 1)) as usize
}

/// Weights of one pointwise convolution layer: one `c_in x c_out` matrix per
/// kernel tap plus a bias. The 27 matrices are stacked vertically, tap-major,
/// in [`atrous_offsets`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    c_in: usize,
    c_out: usize,
    pub weights: Tensor2D,
    pub bias: Tensor2D,
}

impl KernelWeights {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            weights: Tensor2D::zeros(KERNEL_TAPS * c_in, c_out),
            bias: Tensor2D::zeros(1, c_out),
        }
    }

    pub fn from_parts(
        c_in: usize,
        c_out: usize,
        weights: Tensor2D,
        bias: Tensor2D,
    ) -> Result<Self> {
        if weights.shape() != (KERNEL_TAPS * c_in, c_out) || bias.shape() != (1, c_out) {
            return Err(Error::Shape(format!(
                "kernel {c_in}->{c_out} needs weights {}x{c_out} and bias 1x{c_out}, got {:?} and {:?}",
                KERNEL_TAPS * c_in,
                weights.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            c_in,
            c_out,
            weights,
            bias,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    /// Weight of tap `tap` from input channel `i` to output channel `o`.
    pub fn weight(&self, tap: usize, i: usize, o: usize) -> f64 {
        self.weights.get(tap * self.c_in + i, o)
    }

    pub fn set_weight(&mut self, tap: usize, i: usize, o: usize, value: f64) {
        self.weights.set(tap * self.c_in + i, o, value);
    }

    /// `27 * c_in * c_out + c_out`, whatever the stride.
    pub fn param_count(&self) -> usize {
        conv_param_count(self.c_in, self.c_out)
    }
}

pub fn conv_param_count(c_in: usize, c_out: usize) -> usize {
    KERNEL_TAPS * c_in * c_out + c_out
}

/// Marker for an absent neighbor cell.
pub const NO_CELL: u32 = u32::MAX;

/// For every occupied cell, the dense index of each of its 27 atrous
/// neighbors at one stride (or [`NO_CELL`]).
#[derive(Debug)]
pub struct NeighborTable {
    pub stride: usize,
    pub taps: Vec<[u32; KERNEL_TAPS]>,
}

/// Dense, index-based view of a grid's cell membership.
///
/// Membership is fixed by positions, so one layout serves every layer of a
/// network while feature maps change. Neighbor tables are built lazily per
/// stride and cached.
#[derive(Debug)]
pub struct CellLayout {
    cells: Vec<Cell>,
    member_offsets: Vec<usize>,
    members: Vec<usize>,
    point_cell: Vec<u32>,
    lookup: HashMap<Cell, u32>,
    tables: Mutex<BTreeMap<usize, Arc<NeighborTable>>>,
}

impl CellLayout {
    pub fn from_grid(grid: &VoxelGrid) -> Self {
        Self::from_point_cells(grid.point_cells())
    }

    pub fn from_point_cells(point_cells: &[Cell]) -> Self {
        let mut by_cell: BTreeMap<Cell, Vec<usize>> = BTreeMap::new();
        for (i, c) in point_cells.iter().enumerate() {
            by_cell.entry(*c).or_default().push(i);
        }
        let mut cells = Vec::with_capacity(by_cell.len());
        let mut member_offsets = Vec::with_capacity(by_cell.len() + 1);
        let mut members = Vec::with_capacity(point_cells.len());
        let mut point_cell = vec![0u32; point_cells.len()];
        let mut lookup = HashMap::with_capacity(by_cell.len());
        member_offsets.push(0);
        for (idx, (cell, pts)) in by_cell.into_iter().enumerate() {
            for &p in &pts {
                point_cell[p] = idx as u32;
            }
            members.extend_from_slice(&pts);
            member_offsets.push(members.len());
            lookup.insert(cell, idx as u32);
            cells.push(cell);
        }
        Self {
            cells,
            member_offsets,
            members,
            point_cell,
            lookup,
            tables: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn num_points(&self) -> usize {
        self.point_cell.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell_of(&self, point: usize) -> usize {
        self.point_cell[point] as usize
    }

    pub fn members(&self, cell: usize) -> &[usize] {
        &self.members[self.member_offsets[cell]..self.member_offsets[cell + 1]]
    }

    pub fn index_of(&self, cell: Cell) -> Option<usize> {
        self.lookup.get(&cell).map(|&i| i as usize)
    }

    pub fn neighbors(&self, stride: usize) -> Result<Arc<NeighborTable>> {
        let offsets = atrous_offsets(stride)?;
        let mut tables = self.tables.lock().expect("neighbor cache poisoned");
        if let Some(t) = tables.get(&stride) {
            return Ok(Arc::clone(t));
        }
        let taps = self
            .cells
            .iter()
            .map(|c| {
                let mut row = [NO_CELL; KERNEL_TAPS];
                for (slot, o) in row.iter_mut().zip(&offsets) {
                    let n = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
                    if let Some(&idx) = self.lookup.get(&n) {
                        *slot = idx;
                    }
                }
                row
            })
            .collect();
        let table = Arc::new(NeighborTable { stride, taps });
        tables.insert(stride, Arc::clone(&table));
        Ok(table)
    }

    /// Per-cell mean of `features` (rows indexed by point).
    pub fn cell_means(&self, features: &Tensor2D) -> Tensor2D {
        let c = features.cols();
        let mut means = Tensor2D::zeros(self.cells.len(), c);
        for cell in 0..self.cells.len() {
            let members = self.members(cell);
            let row = means.row_mut(cell);
            for &m in members {
                for (acc, v) in row.iter_mut().zip(features.row(m)) {
                    *acc += v;
                }
            }
            let inv = 1.0 / members.len() as f64;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        means
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(points: &[([f64; 3], Vec<f64>)]) -> PointCloud {
        let pts: Vec<Point> = points
            .iter()
            .map(|(p, f)| Point {
                position: *p,
                features: f.clone(),
                label: None,
            })
            .collect();
        PointCloud::from_points(&pts).unwrap()
    }

    #[test]
    fn single_point_lands_in_origin_cell() {
        let g = build_grid(&cloud(&[([0.0; 3], vec![1.0])]), 1.0).unwrap();
        assert_eq!(g.cells().len(), 1);
        assert_eq!(g.members([0, 0, 0]), &[0]);
    }

    #[test]
    fn floor_binning() {
        let g = build_grid(
            &cloud(&[([0.1, 0.1, 0.1], vec![0.0]), ([1.5, 0.2, 0.3], vec![0.0])]),
            1.0,
        )
        .unwrap();
        // origin is the minimum (0.1, 0.1, 0.1)
        assert_eq!(g.point_cells(), &[[0, 0, 0], [1, 0, 0]]);
    }

    #[test]
    fn boundary_goes_to_higher_cell() {
        let g = build_grid(
            &cloud(&[([0.0; 3], vec![0.0]), ([1.0, 0.0, 0.0], vec![0.0])]),
            1.0,
        )
        .unwrap();
        assert_eq!(g.point_cells()[1], [1, 0, 0]);
    }

    #[test]
    fn means() {
        let g = build_grid(
            &cloud(&[
                ([0.0; 3], vec![1.0, 3.0]),
                ([0.2, 0.2, 0.2], vec![3.0, 5.0]),
            ]),
            1.0,
        )
        .unwrap();
        assert_eq!(g.cell_mean([0, 0, 0]), vec![2.0, 4.0]);
        assert_eq!(g.cell_mean([99, 99, 99]), vec![0.0, 0.0]);

        let single = build_grid(&cloud(&[([5.0; 3], vec![7.0, -1.0])]), 0.5).unwrap();
        assert_eq!(single.cell_mean([0, 0, 0]), vec![7.0, -1.0]);

        let one_channel = build_grid(
            &cloud(&[([0.0; 3], vec![1.0]), ([0.5, 0.0, 0.0], vec![3.0])]),
            1.0,
        )
        .unwrap();
        assert_eq!(one_channel.cell_mean([0, 0, 0]), vec![2.0]);
    }

    #[test]
    fn non_finite_coordinate_names_point() {
        let err = build_grid(
            &cloud(&[([0.0; 3], vec![0.0]), ([f64::NAN, 0.0, 0.0], vec![0.0])]),
            1.0,
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::InvalidInput(ref m) if m.contains("point 1")),
            "{err}"
        );
    }

    #[test]
    fn empty_cloud_has_zero_origin() {
        let g = build_grid(&cloud(&[]), 1.0).unwrap();
        assert_eq!(g.origin(), [0.0; 3]);
        assert!(g.cells().is_empty());
    }

    #[test]
    fn offsets() {
        let unit = atrous_offsets(1).unwrap();
        assert_eq!(unit.len(), 27);
        assert_eq!(unit[0], [-1, -1, -1]);
        assert_eq!(unit[13], [0, 0, 0]);
        assert_eq!(unit[26], [1, 1, 1]);
        assert!(unit.iter().all(|o| o.iter().all(|v| (-1..=1).contains(v))));
        let two = atrous_offsets(2).unwrap();
        assert!(two.iter().all(|o| o.iter().all(|v| [-2, 0, 2].contains(v))));
        for s in 1..6 {
            let o = atrous_offsets(s).unwrap();
            assert!(o.contains(&[0, 0, 0]));
            let mut sorted = o.to_vec();
            sorted.sort();
            assert_eq!(sorted, o.to_vec());
        }
        assert!(matches!(atrous_offsets(0), Err(Error::InvalidArgument(_))));
        assert_eq!(tap_index(0, 0, 0), 13);
        assert_eq!(tap_index(1, -1, 0), 9 * 2 + 1);
    }

    #[test]
    fn param_count_is_stride_free() {
        let k = KernelWeights::zeros(4, 5);
        assert_eq!(k.param_count(), 27 * 20 + 5);
        assert_eq!(k.weights.rows(), 27 * 4);
    }

    #[test]
    fn layout_matches_grid() {
        let c = cloud(&[
            ([0.0; 3], vec![1.0]),
            ([2.5, 0.0, 0.0], vec![2.0]),
            ([0.1, 0.1, 0.0], vec![3.0]),
        ]);
        let g = build_grid(&c, 1.0).unwrap();
        let layout = CellLayout::from_grid(&g);
        assert_eq!(layout.num_cells(), 2);
        assert_eq!(layout.cells(), &[[0, 0, 0], [2, 0, 0]]);
        assert_eq!(layout.members(0), &[0, 2]);
        let means = layout.cell_means(c.features());
        assert_eq!(means.as_slice(), &[2.0, 2.0]);
        let t1 = layout.neighbors(1).unwrap();
        assert_eq!(t1.taps[0][tap_index(1, 0, 0)], NO_CELL);
        let t2 = layout.neighbors(2).unwrap();
        assert_eq!(t2.taps[0][tap_index(1, 0, 0)], 1);
        assert_eq!(t2.taps[1][tap_index(-1, 0, 0)], 0);
        assert_eq!(t2.taps[1][tap_index(0, 0, 0)], 1);
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<([f64; 3], f64)>> {
        prop::collection::vec(
            ((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), -10.0..10.0f64)
                .prop_map(|((x, y, z), f)| ([x, y, z], f)),
            0..60,
        )
    }

    proptest! {
        #[test]
        fn partition_and_means(pts in arb_cloud(), h in 0.1..2.0f64) {
            let c = cloud(&pts.iter().map(|(p, f)| (*p, vec![*f])).collect::<Vec<_>>());
            let g = build_grid(&c, h).unwrap();
            let total: usize = g.cells().values().map(Vec::len).sum();
            prop_assert_eq!(total, c.len());
            let mut seen = vec![0; c.len()];
            for (cell, members) in g.cells() {
                let mut s = 0.0;
                for &m in members {
                    seen[m] += 1;
                    s += c.features().get(m, 0);
                }
                let mean = g.cell_mean(*cell)[0];
                prop_assert!((mean - s / members.len() as f64).abs() < 1e-12);
            }
            prop_assert!(seen.iter().all(|&v| v == 1));
        }

        #[test]
        fn translation_leaves_cells_alone(pts in arb_cloud(), h in 0.1..2.0f64,
                                          shift in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)) {
            // Use positions on a lattice so the shift is exact in floating point.
            let snap = |v: f64| (v * 8.0).round() / 8.0;
            let base: Vec<([f64; 3], Vec<f64>)> = pts.iter()
                .map(|(p, f)| ([snap(p[0]), snap(p[1]), snap(p[2])], vec![*f]))
                .collect();
            let moved: Vec<([f64; 3], Vec<f64>)> = base.iter()
                .map(|(p, f)| ([p[0] + snap(shift.0), p[1] + snap(shift.1), p[2] + snap(shift.2)], f.clone()))
                .collect();
            let h = snap(h).max(0.125);
            let a = build_grid(&cloud(&base), h).unwrap();
            let b = build_grid(&cloud(&moved), h).unwrap();
            prop_assert_eq!(a.cells(), b.cells());
            for cell in a.cells().keys() {
                prop_assert_eq!(a.cell_mean(*cell), b.cell_mean(*cell));
            }
        }
    }
}
