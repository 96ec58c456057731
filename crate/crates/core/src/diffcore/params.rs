use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::DiffError;

/// One dense tensor inside a segment, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into the flat parameter vector.
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named, contiguous run of tensors (for example all weights of one actor).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Indices into [`Layout::tensors`].
    pub tensors: Vec<usize>,
}

/// Immutable description of how a flat parameter vector is carved into
/// segments and tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<SegmentSpec>,
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[SegmentSpec] {
        &self.segments
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn segment(&self, name: &str) -> Result<&SegmentSpec, DiffError> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| DiffError::UnknownSegment(name.to_string()))
    }

    pub fn segment_index(&self, name: &str) -> Result<usize, DiffError> {
        self.segments
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| DiffError::UnknownSegment(name.to_string()))
    }

    /// Looks up a tensor by segment and tensor name, returning its global index.
    pub fn tensor_index(&self, segment: &str, tensor: &str) -> Result<usize, DiffError> {
        let seg = self.segment(segment)?;
        seg.tensors
            .iter()
            .copied()
            .find(|&t| self.tensors[t].name == tensor)
            .ok_or_else(|| DiffError::UnknownTensor {
                segment: segment.to_string(),
                tensor: tensor.to_string(),
            })
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    segments: Vec<SegmentSpec>,
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl LayoutBuilder {
    /// Appends a segment made of `(name, rows, cols)` tensors.
    ///
    /// Panics on a duplicate segment name, which is a construction bug.
    pub fn segment(mut self, name: &str, tensors: &[(&str, usize, usize)]) -> Self {
        assert!(
            self.segments.iter().all(|s| s.name != name),
            "duplicate segment `{name}`"
        );
        let start = self.len;
        let mut ids = Vec::with_capacity(tensors.len());
        for &(tname, rows, cols) in tensors {
            ids.push(self.tensors.len());
            self.tensors.push(TensorSpec {
                name: tname.to_string(),
                rows,
                cols,
                offset: self.len,
            });
            self.len += rows * cols;
        }
        self.segments.push(SegmentSpec {
            name: name.to_string(),
            offset: start,
            len: self.len - start,
            tensors: ids,
        });
        self
    }

    pub fn build(self) -> Arc<Layout> {
        Arc::new(Layout {
            segments: self.segments,
            tensors: self.tensors,
            len: self.len,
        })
    }
}

/// Flat vector of trainable values bound to a [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self, DiffError> {
        if values.len() != layout.len() {
            return Err(DiffError::Dimension {
                what: "parameter vector".into(),
                expected: layout.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite(format!("parameter entry {i}")));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn segment(&self, name: &str) -> Result<&[f64], DiffError> {
        let s = self.layout.segment(name)?;
        Ok(&self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [f64], DiffError> {
        let s = self.layout.segment(name)?;
        let (o, l) = (s.offset, s.len);
        Ok(&mut self.values[o..o + l])
    }

    pub fn set_segment(&mut self, name: &str, data: &[f64]) -> Result<(), DiffError> {
        let dst = self.segment_mut(name)?;
        if dst.len() != data.len() {
            return Err(DiffError::Dimension {
                what: format!("segment `{name}`"),
                expected: dst.len(),
                got: data.len(),
            });
        }
        dst.copy_from_slice(data);
        Ok(())
    }

    pub fn tensor(&self, index: usize) -> &[f64] {
        let t = &self.layout.tensors()[index];
        &self.values[t.offset..t.offset + t.len()]
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut [f64] {
        let (o, l) = {
            let t = &self.layout.tensors()[index];
            (t.offset, t.len())
        };
        &mut self.values[o..o + l]
    }

    /// `self ← τ·source + (1−τ)·self`, elementwise.
    pub fn polyak_from(&mut self, source: &ParameterVector, tau: f64) -> Result<(), DiffError> {
        if self.layout != source.layout {
            return Err(DiffError::LayoutMismatch);
        }
        for (t, s) in self.values.iter_mut().zip(&source.values) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<Layout> {
        Layout::builder()
            .segment("a", &[("w", 2, 3), ("b", 1, 3)])
            .segment("b", &[("w", 3, 1)])
            .build()
    }

    #[test]
    fn offsets_are_contiguous() {
        let l = layout();
        assert_eq!(l.len(), 12);
        assert_eq!(l.segment("a").unwrap().len, 9);
        assert_eq!(l.segment("b").unwrap().offset, 9);
        assert_eq!(l.tensor_index("b", "w").unwrap(), 2);
    }

    #[test]
    fn rejects_non_finite_values() {
        let mut v = vec![0.0; 12];
        v[4] = f64::NAN;
        assert!(ParameterVector::from_values(layout(), v).is_err());
    }

    #[test]
    fn polyak_shrinks_gap_geometrically() {
        let l = layout();
        let live = ParameterVector::from_values(l.clone(), (0..12).map(f64::from).collect()).unwrap();
        let mut target = ParameterVector::zeros(l);
        let tau = 0.1;
        let gap0: f64 = live.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..7 {
            target.polyak_from(&live, tau).unwrap();
        }
        let gap: f64 = live
            .values()
            .iter()
            .zip(target.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((gap - gap0 * 0.9f64.powi(7)).abs() < 1e-12 * gap0);
    }
}
