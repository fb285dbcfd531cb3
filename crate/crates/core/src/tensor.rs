//! Conversions between faces/labels and `tch` tensors.

use ndarray::Array3;
use tch::{Device, Kind, Tensor};

use crate::{AlignedFace, AttributeLabel, Error, Result};

/// Stacks faces into a `[B, 3, S, S]` tensor.
pub fn faces_to_tensor(faces: &[&AlignedFace], kind: Kind) -> Result<Tensor> {
    let first = faces
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty face batch".into()))?;
    let s = first.size();
    let mut data = Vec::with_capacity(faces.len() * 3 * s * s);
    for f in faces {
        if f.size() != s {
            return Err(Error::ShapeMismatch(format!("mixed canvas sizes {s} and {}", f.size())));
        }
        let chw = f.pixels().view().permuted_axes([2, 0, 1]);
        data.extend(chw.iter().copied());
    }
    let t = Tensor::from_slice(&data).reshape([faces.len() as i64, 3, s as i64, s as i64]);
    Ok(t.to_kind(kind))
}

pub fn face_to_tensor(face: &AlignedFace, kind: Kind) -> Tensor {
    faces_to_tensor(&[face], kind).expect("single face batch")
}

/// Splits a `[B, 3, S, S]` tensor back into faces, clipping into [0, 1].
pub fn tensor_to_faces(t: &Tensor) -> Result<Vec<AlignedFace>> {
    let size = t.size();
    if size.len() != 4 || size[1] != 3 || size[2] != size[3] {
        return Err(Error::ShapeMismatch(format!("expected [B, 3, S, S], got {size:?}")));
    }
    let (b, s) = (size[0] as usize, size[2] as usize);
    let flat = tensor_to_vec_f32(&t.permute([0, 2, 3, 1]))?;
    (0..b)
        .map(|i| {
            let chunk = flat[i * s * s * 3..(i + 1) * s * s * 3].to_vec();
            let px = Array3::from_shape_vec((s, s, 3), chunk).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            AlignedFace::from_clipped(px)
        })
        .collect()
}

pub fn tensor_to_vec_f32(t: &Tensor) -> Result<Vec<f32>> {
    let flat = t
        .detach()
        .to_device(Device::Cpu)
        .to_kind(Kind::Float)
        .contiguous()
        .view([-1]);
    Ok(Vec::<f32>::try_from(&flat)?)
}

pub fn tensor_to_vec_f64(t: &Tensor) -> Result<Vec<f64>> {
    let flat = t
        .detach()
        .to_device(Device::Cpu)
        .to_kind(Kind::Double)
        .contiguous()
        .view([-1]);
    Ok(Vec::<f64>::try_from(&flat)?)
}

pub fn scalar(t: &Tensor) -> f64 {
    t.detach().to_kind(Kind::Double).double_value(&[])
}

/// `[B, 5]` label encodings.
pub fn labels_to_tensor(labels: &[AttributeLabel], kind: Kind) -> Tensor {
    let data: Vec<f32> = labels.iter().flat_map(|l| l.encode()).collect();
    Tensor::from_slice(&data)
        .reshape([labels.len() as i64, 5])
        .to_kind(kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn face_tensor_round_trip() {
        let px = Array3::from_shape_fn((8, 8, 3), |(r, c, ch)| (r * 8 + c) as f32 / 64.0 * (ch as f32 + 1.0) / 3.0);
        let f = AlignedFace::new(px).unwrap();
        let t = faces_to_tensor(&[&f, &f], Kind::Float).unwrap();
        assert_eq!(t.size(), vec![2, 3, 8, 8]);
        assert_eq!(t.double_value(&[0, 2, 1, 3]), f.pixels()[[1, 3, 2]] as f64);
        let back = tensor_to_faces(&t).unwrap();
        assert_eq!(back[1], f);
    }
}
