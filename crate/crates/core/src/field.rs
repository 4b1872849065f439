//! Node-valued fields on a [`TorusGrid`].
//!
//! Storage is C-order over nodes with the components of each node stored
//! contiguously. Symmetric tensors keep the upper triangle row by row
//! (`00, 01, 11` in 2-D; `00, 01, 02, 11, 12, 22` in 3-D). Deviatoric
//! tensors drop the last diagonal entry, which is reconstructed as the
//! negated sum of the others so the trace vanishes by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TorusGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Vector,
    SymTensor,
    DevTensor,
}

impl FieldKind {
    pub fn components(self, dim: usize) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector => dim,
            FieldKind::SymTensor => dim * (dim + 1) / 2,
            FieldKind::DevTensor => dim * (dim + 1) / 2 - 1,
        }
    }

    /// Numeric tag used by the CIF1 file format.
    pub fn code(self) -> u32 {
        match self {
            FieldKind::Scalar => 0,
            FieldKind::Vector => 1,
            FieldKind::SymTensor => 2,
            FieldKind::DevTensor => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(FieldKind::Scalar),
            1 => Some(FieldKind::Vector),
            2 => Some(FieldKind::SymTensor),
            3 => Some(FieldKind::DevTensor),
            _ => None,
        }
    }
}

/// Position of entry `(i, j)` in the packed upper triangle.
pub fn sym_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // rows 0..i hold dim, dim-1, ... entries
    i * dim - i * i.saturating_sub(1) / 2 + (j - i)
}

/// A field on a single spatial slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    kind: FieldKind,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &TorusGrid, kind: FieldKind) -> Self {
        let len = grid.node_count() * kind.components(grid.dim());
        Self {
            grid: grid.clone(),
            kind,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(grid: &TorusGrid, kind: FieldKind, data: Vec<f64>) -> Result<Self> {
        let expected = grid.node_count() * kind.components(grid.dim());
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            kind,
            data,
        })
    }

    /// Sample `f(x)` at every node; `f` writes the node's components.
    pub fn from_fn(
        grid: &TorusGrid,
        kind: FieldKind,
        mut f: impl FnMut(&[f64], &mut [f64]),
    ) -> Self {
        let mut out = Self::zeros(grid, kind);
        let nc = out.ncomp();
        for node in 0..grid.node_count() {
            let x = grid.node_position(node);
            f(&x, &mut out.data[node * nc..(node + 1) * nc]);
        }
        out
    }

    pub fn scalar_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, FieldKind::Scalar, |x, out| out[0] = f(x))
    }

    pub fn constant(grid: &TorusGrid, kind: FieldKind, value: &[f64]) -> Result<Self> {
        let nc = kind.components(grid.dim());
        if value.len() != nc {
            return Err(Error::LengthMismatch {
                expected: nc,
                found: value.len(),
            });
        }
        Ok(Self::from_fn(grid, kind, |_, out| {
            out.copy_from_slice(value)
        }))
    }

    /// Build a multi-component field from per-component node arrays.
    pub fn from_components(grid: &TorusGrid, kind: FieldKind, comps: &[Vec<f64>]) -> Result<Self> {
        let nc = kind.components(grid.dim());
        if comps.len() != nc {
            return Err(Error::LengthMismatch {
                expected: nc,
                found: comps.len(),
            });
        }
        let mut out = Self::zeros(grid, kind);
        for (c, comp) in comps.iter().enumerate() {
            out.set_component(c, comp)?;
        }
        Ok(out)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn ncomp(&self) -> usize {
        self.kind.components(self.grid.dim())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn value(&self, node: usize) -> &[f64] {
        let nc = self.ncomp();
        &self.data[node * nc..(node + 1) * nc]
    }

    pub fn value_mut(&mut self, node: usize) -> &mut [f64] {
        let nc = self.ncomp();
        &mut self.data[node * nc..(node + 1) * nc]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        let nc = self.ncomp();
        self.data.iter().skip(c).step_by(nc).copied().collect()
    }

    pub fn set_component(&mut self, c: usize, values: &[f64]) -> Result<()> {
        let n = self.grid.node_count();
        if values.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: values.len(),
            });
        }
        let nc = self.ncomp();
        for (node, v) in values.iter().enumerate() {
            self.data[node * nc + c] = *v;
        }
        Ok(())
    }

    pub fn components(&self) -> Vec<Vec<f64>> {
        (0..self.ncomp()).map(|c| self.component(c)).collect()
    }

    pub fn check_compatible(&self, other: &Field) -> Result<()> {
        if !self.grid.same_space(&other.grid) {
            return Err(Error::GridMismatch);
        }
        if self.kind != other.kind {
            return Err(Error::KindMismatch {
                expected: self.kind,
                found: other.kind,
            });
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Spatial mean of every component.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.grid.node_count() as f64;
        let nc = self.ncomp();
        let mut out = vec![0.0; nc];
        for chunk in self.data.chunks_exact(nc) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn axpy(&mut self, a: f64, other: &Field) -> Result<()> {
        self.check_compatible(other)?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// One spatial field per time slice, stored slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: TorusGrid,
    kind: FieldKind,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &TorusGrid, kind: FieldKind) -> Self {
        let len = grid.nt() * grid.node_count() * kind.components(grid.dim());
        Self {
            grid: grid.clone(),
            kind,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(grid: &TorusGrid, kind: FieldKind, data: Vec<f64>) -> Result<Self> {
        let expected = grid.nt() * grid.node_count() * kind.components(grid.dim());
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            kind,
            data,
        })
    }

    /// Every slice equal to `field`.
    pub fn constant_in_time(grid: &TorusGrid, field: &Field) -> Result<Self> {
        if !grid.same_space(field.grid()) {
            return Err(Error::GridMismatch);
        }
        let mut data = Vec::with_capacity(grid.nt() * field.data().len());
        for _ in 0..grid.nt() {
            data.extend_from_slice(field.data());
        }
        Ok(Self {
            grid: grid.clone(),
            kind: field.kind(),
            data,
        })
    }

    pub fn from_slices(grid: &TorusGrid, slices: &[Field]) -> Result<Self> {
        if slices.len() != grid.nt() {
            return Err(Error::LengthMismatch {
                expected: grid.nt(),
                found: slices.len(),
            });
        }
        let kind = slices[0].kind();
        let mut data = Vec::with_capacity(grid.nt() * slices[0].data().len());
        for s in slices {
            if !grid.same_space(s.grid()) {
                return Err(Error::GridMismatch);
            }
            if s.kind() != kind {
                return Err(Error::KindMismatch {
                    expected: kind,
                    found: s.kind(),
                });
            }
            data.extend_from_slice(s.data());
        }
        Ok(Self {
            grid: grid.clone(),
            kind,
            data,
        })
    }

    /// Sample `f(t, x)` at every space-time node.
    pub fn from_fn(
        grid: &TorusGrid,
        kind: FieldKind,
        mut f: impl FnMut(f64, &[f64], &mut [f64]),
    ) -> Self {
        let mut out = Self::zeros(grid, kind);
        let nc = out.ncomp();
        let nn = grid.node_count();
        let positions: Vec<Vec<f64>> = (0..nn).map(|n| grid.node_position(n)).collect();
        for k in 0..grid.nt() {
            let t = grid.time(k);
            let base = k * nn * nc;
            for (node, x) in positions.iter().enumerate() {
                f(
                    t,
                    x,
                    &mut out.data[base + node * nc..base + (node + 1) * nc],
                );
            }
        }
        out
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn ncomp(&self) -> usize {
        self.kind.components(self.grid.dim())
    }

    pub fn nt(&self) -> usize {
        self.grid.nt()
    }

    pub fn slice_len(&self) -> usize {
        self.grid.node_count() * self.ncomp()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slice_data(&self, k: usize) -> &[f64] {
        let len = self.slice_len();
        &self.data[k * len..(k + 1) * len]
    }

    pub fn slice_data_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.slice_len();
        &mut self.data[k * len..(k + 1) * len]
    }

    pub fn slice(&self, k: usize) -> Field {
        Field {
            grid: self.grid.clone(),
            kind: self.kind,
            data: self.slice_data(k).to_vec(),
        }
    }

    pub fn slices(&self) -> Vec<Field> {
        (0..self.nt()).map(|k| self.slice(k)).collect()
    }

    pub fn set_slice(&mut self, k: usize, field: &Field) -> Result<()> {
        if !self.grid.same_space(field.grid()) {
            return Err(Error::GridMismatch);
        }
        if field.kind() != self.kind {
            return Err(Error::KindMismatch {
                expected: self.kind,
                found: field.kind(),
            });
        }
        self.slice_data_mut(k).copy_from_slice(field.data());
        Ok(())
    }

    pub fn value(&self, k: usize, node: usize) -> &[f64] {
        let nc = self.ncomp();
        let off = k * self.slice_len() + node * nc;
        &self.data[off..off + nc]
    }

    pub fn check_compatible(&self, other: &SpaceTimeField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.kind != other.kind {
            return Err(Error::KindMismatch {
                expected: self.kind,
                found: other.kind,
            });
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: FieldKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch {
                expected: kind,
                found: self.kind,
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &SpaceTimeField) -> Result<()> {
        self.check_compatible(other)?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SpaceTimeField {
        Self {
            grid: self.grid.clone(),
            kind: self.kind,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Boolean node mask over all space-time nodes (the discrete open set `Q`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeMask {
    grid: TorusGrid,
    data: Vec<bool>,
}

impl SpaceTimeMask {
    pub fn full(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![true; grid.nt() * grid.node_count()],
        }
    }

    pub fn empty(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![false; grid.nt() * grid.node_count()],
        }
    }

    pub fn from_vec(grid: &TorusGrid, data: Vec<bool>) -> Result<Self> {
        let expected = grid.nt() * grid.node_count();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            data,
        })
    }

    /// All nodes of the given slices.
    pub fn slices(grid: &TorusGrid, range: std::ops::Range<usize>) -> Self {
        let mut m = Self::empty(grid);
        let nn = grid.node_count();
        for k in range {
            m.data[k * nn..(k + 1) * nn]
                .iter_mut()
                .for_each(|b| *b = true);
        }
        m
    }

    /// Nodes whose slice time lies strictly inside `(lo, hi)`.
    pub fn time_window(grid: &TorusGrid, lo: f64, hi: f64) -> Self {
        Self::slices(grid, grid.slices_in(lo, hi))
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, k: usize, node: usize) -> bool {
        self.data[k * self.grid.node_count() + node]
    }

    pub fn set(&mut self, k: usize, node: usize, value: bool) {
        let nn = self.grid.node_count();
        self.data[k * nn + node] = value;
    }

    pub fn slice(&self, k: usize) -> &[bool] {
        let nn = self.grid.node_count();
        &self.data[k * nn..(k + 1) * nn]
    }

    pub fn slice_count(&self, k: usize) -> usize {
        self.slice(k).iter().filter(|&&b| b).count()
    }

    pub fn slice_is_full(&self, k: usize) -> bool {
        self.slice(k).iter().all(|&b| b)
    }

    pub fn slice_is_empty(&self, k: usize) -> bool {
        !self.slice(k).iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of masked-in nodes in slice `k`.
    pub fn slice_fraction(&self, k: usize) -> f64 {
        self.slice_count(k) as f64 / self.grid.node_count() as f64
    }

    pub fn intersect(&self, other: &SpaceTimeMask) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid: self.grid.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    /// Every masked-in node of `self` is masked-in in `other`.
    pub fn is_subset_of(&self, other: &SpaceTimeMask) -> bool {
        self.grid == other.grid && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// Slices that contain at least one masked-in node.
    pub fn active_slices(&self) -> Vec<usize> {
        (0..self.grid.nt())
            .filter(|&k| !self.slice_is_empty(k))
            .collect()
    }
}
