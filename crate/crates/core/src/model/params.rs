use serde::{Deserialize, Serialize};

use super::ModelError;

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// All model parameters in one flat `f64` array with a named segment map.
///
/// Keeping the parameters flat makes the merging attacks exact: task
/// arithmetic, sign election, and coordinate dropping are plain element-wise
/// operations over `values`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParameterVector {
    /// Build a zero-initialized vector from an ordered (name, len) layout.
    pub fn zeros(layout: &[(String, usize)]) -> Self {
        let mut segments = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for (name, len) in layout {
            segments.push(Segment {
                name: name.clone(),
                offset,
                len: *len,
            });
            offset += len;
        }
        Self {
            values: vec![0.0; offset],
            segments,
        }
    }

    pub fn from_parts(values: Vec<f64>, segments: Vec<Segment>) -> Result<Self, ModelError> {
        let pv = Self { values, segments };
        pv.validate()?;
        Ok(pv)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.segment(name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Segments must partition `[0, len)` exactly and all values must be finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut cursor = 0;
        for seg in &self.segments {
            if seg.offset != cursor {
                return Err(ModelError::SegmentMap(format!(
                    "segment {} starts at {} but previous segment ends at {}",
                    seg.name, seg.offset, cursor
                )));
            }
            cursor += seg.len;
        }
        if cursor != self.values.len() {
            return Err(ModelError::SegmentMap(format!(
                "segments cover {} values but vector holds {}",
                cursor,
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { index: i });
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.segments == other.segments
    }

    /// Element-wise `self - base`, keeping the segment map.
    pub fn delta(&self, base: &Self) -> Result<Self, ModelError> {
        if !self.same_shape(base) {
            return Err(ModelError::SegmentMap(
                "parameter vectors have different segment maps".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(&base.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            values,
            segments: self.segments.clone(),
        })
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<(), ModelError> {
        if !self.same_shape(other) {
            return Err(ModelError::SegmentMap(
                "parameter vectors have different segment maps".into(),
            ));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Vec<(String, usize)> {
        vec![("a".into(), 3), ("b".into(), 2)]
    }

    #[test]
    fn zeros_partitions_exactly() {
        let pv = ParameterVector::zeros(&layout());
        assert_eq!(pv.len(), 5);
        pv.validate().unwrap();
        assert_eq!(pv.segment("b").unwrap().offset, 3);
    }

    #[test]
    fn gap_in_segments_rejected() {
        let segs = vec![
            Segment {
                name: "a".into(),
                offset: 0,
                len: 2,
            },
            Segment {
                name: "b".into(),
                offset: 3,
                len: 2,
            },
        ];
        assert!(ParameterVector::from_parts(vec![0.0; 5], segs).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mut pv = ParameterVector::zeros(&layout());
        pv.values_mut()[1] = f64::NAN;
        assert!(pv.validate().is_err());
    }

    #[test]
    fn delta_and_add_scaled_roundtrip() {
        let mut a = ParameterVector::zeros(&layout());
        let mut b = ParameterVector::zeros(&layout());
        a.values_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        b.values_mut().copy_from_slice(&[0.5, 0.5, 0.5, 0.5, 0.5]);
        let d = a.delta(&b).unwrap();
        let mut back = b.clone();
        back.add_scaled(&d, 1.0).unwrap();
        assert_eq!(back.values(), a.values());
    }
}
