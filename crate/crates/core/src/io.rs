//! Binary heatmap, pool and cluster formats and line-delimited JSON records.
//!
//! All binary formats are little-endian: a 4-byte magic, a `u32` version,
//! `u32` header fields and a flat `f32` payload. Values are widened to `f64`
//! on read.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::clustering::ClusterModel;
use crate::dataset::{Annotation, Sample};
use crate::error::{Error, Result};
use crate::grid::{ConfidenceStack, Frame, Grid2D};
use crate::pool::{GraphicalModel, ModelPool, PairwiseKernel, KERNEL_FLOOR};
use crate::skeleton::SkeletonTree;

pub const HEATMAP_MAGIC: &[u8; 4] = b"GMHM";
pub const POOL_MAGIC: &[u8; 4] = b"GMPK";
pub const CLUSTER_MAGIC: &[u8; 4] = b"GMKM";
pub const FORMAT_VERSION: u32 = 1;

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const HEATMAP_DIR: &str = "heatmaps";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        if self.bytes.is_empty() {
            return Err(Error::format(0, "empty file"));
        }
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        let at = self.pos;
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(at as u64, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        let v = f32::from_le_bytes(self.take(4, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(at as u64, format!("non-finite {what}")));
        }
        Ok(v as f64)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f32(what)).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn header(magic: &[u8; 4], fields: &[u32], payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * fields.len() + 4 * payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for f in fields {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

fn push_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::param(format!("{what} {v} does not fit the format")))
}

pub fn encode_heatmaps(stack: &ConfidenceStack) -> Result<Vec<u8>> {
    let (h, w) = stack.dims();
    let k = stack.len();
    let mut out = header(
        HEATMAP_MAGIC,
        &[to_u32(k, "layer count")?, to_u32(h, "height")?, to_u32(w, "width")?],
        k * h * w,
    );
    for g in stack.layers() {
        for &v in g.values() {
            push_f32(&mut out, v);
        }
    }
    Ok(out)
}

pub fn decode_heatmaps(bytes: &[u8]) -> Result<ConfidenceStack> {
    let mut r = Reader::new(bytes);
    r.magic(HEATMAP_MAGIC)?;
    let k = r.u32("layer count")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    if k == 0 || h == 0 || w == 0 {
        return Err(Error::format(8, format!("empty heatmap shape {k}x{h}x{w}")));
    }
    let mut layers = Vec::with_capacity(k);
    for _ in 0..k {
        let at = r.pos;
        let values = r.f32s(h * w, "heatmap value")?;
        if let Some(i) = values.iter().position(|&v| v < 0.0) {
            return Err(Error::format((at + 4 * i) as u64, "negative heatmap value"));
        }
        layers.push(Grid2D::new(h, w, values)?);
    }
    r.finish()?;
    ConfidenceStack::new(layers, Frame::Original)
}

/// Kernels are written per model, per directed edge in schedule order.
pub fn encode_pool(pool: &ModelPool) -> Result<Vec<u8>> {
    let r = pool.radius();
    let side = 2 * r + 1;
    let mut out = header(
        POOL_MAGIC,
        &[to_u32(pool.len(), "model count")?, to_u32(r, "radius")?, to_u32(pool.edge_count(), "edge count")?],
        pool.len() * pool.edge_count() * side * side,
    );
    for m in pool.models() {
        for k in m.kernels() {
            for &v in k.values() {
                push_f32(&mut out, v);
            }
        }
    }
    Ok(out)
}

/// Narrowing to 32 bits can push floor-valued entries just below the floor,
/// so decoded entries are clamped back up to it.
pub fn decode_pool(bytes: &[u8], tree: &SkeletonTree) -> Result<ModelPool> {
    let mut r = Reader::new(bytes);
    r.magic(POOL_MAGIC)?;
    let l = r.u32("model count")? as usize;
    let radius = r.u32("radius")? as usize;
    let at = r.pos;
    let edges = r.u32("edge count")? as usize;
    if l == 0 {
        return Err(Error::format(8, "pool has no models"));
    }
    if edges != tree.schedule().len() {
        return Err(Error::format(
            at as u64,
            format!("pool has {edges} directed edges, skeleton needs {}", tree.schedule().len()),
        ));
    }
    let n = (2 * radius + 1) * (2 * radius + 1);
    let mut models = Vec::with_capacity(l);
    for _ in 0..l {
        let mut kernels = Vec::with_capacity(edges);
        for _ in 0..edges {
            let at = r.pos;
            let values: Vec<f64> = r.f32s(n, "kernel entry")?;
            if let Some(i) = values.iter().position(|&v| v < 0.0) {
                return Err(Error::format((at + 4 * i) as u64, "negative kernel entry"));
            }
            kernels.push(PairwiseKernel::new(radius, values.into_iter().map(|v| v.max(KERNEL_FLOOR)).collect())?);
        }
        models.push(GraphicalModel::new(tree, kernels)?);
    }
    r.finish()?;
    ModelPool::new(models)
}

pub fn encode_clusters(model: &ClusterModel) -> Result<Vec<u8>> {
    let dim = model.dim();
    let mut out = header(
        CLUSTER_MAGIC,
        &[to_u32(model.len(), "cluster count")?, to_u32(dim, "feature dimension")?],
        1 + model.len() * dim,
    );
    push_f32(&mut out, model.tau());
    for c in model.centroids() {
        for &v in c {
            push_f32(&mut out, v);
        }
    }
    Ok(out)
}

pub fn decode_clusters(bytes: &[u8]) -> Result<ClusterModel> {
    let mut r = Reader::new(bytes);
    r.magic(CLUSTER_MAGIC)?;
    let l = r.u32("cluster count")? as usize;
    let dim = r.u32("feature dimension")? as usize;
    let at = r.pos;
    let tau = r.f32("temperature")?;
    if !(tau > 0.0) {
        return Err(Error::format(at as u64, "temperature must be positive"));
    }
    let centroids = (0..l).map(|_| r.f32s(dim, "centroid entry")).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ClusterModel::new(centroids, tau)
}

/// Writes one JSON object per line.
pub fn encode_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::param(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses line-delimited records. Blank lines are skipped; a file without
/// any record is an error.
pub fn decode_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no records".into(),
        });
    }
    Ok(out)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(e).in_file(path))
}

fn in_file<T>(r: Result<T>, path: &Path) -> Result<T> {
    r.map_err(|e| e.in_file(path))
}

pub fn read_heatmaps(path: &Path) -> Result<ConfidenceStack> {
    in_file(decode_heatmaps(&read_bytes(path)?), path)
}

pub fn read_pool(path: &Path, tree: &SkeletonTree) -> Result<ModelPool> {
    in_file(decode_pool(&read_bytes(path)?, tree), path)
}

pub fn read_clusters(path: &Path) -> Result<ClusterModel> {
    in_file(decode_clusters(&read_bytes(path)?), path)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(e).in_file(path))?;
    in_file(decode_jsonl(&text), path)
}

pub fn heatmap_path(dir: &Path, sample_id: &str) -> std::path::PathBuf {
    dir.join(HEATMAP_DIR).join(format!("{sample_id}.gmhm"))
}

/// Loads `annotations.jsonl` and the matching `heatmaps/<id>.gmhm` files.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let annotations: Vec<Annotation> = read_jsonl(&dir.join(ANNOTATIONS_FILE))?;
    let mut samples = Vec::with_capacity(annotations.len());
    let mut dims = None;
    for a in annotations {
        let path = heatmap_path(dir, &a.sample_id);
        let stack = read_heatmaps(&path)?;
        match dims {
            None => dims = Some(stack.dims()),
            Some(d) if d != stack.dims() => {
                return Err(Error::DimensionMismatch { expected: d, got: stack.dims() }.in_file(path));
            }
            _ => {}
        }
        samples.push(Sample::from_parts(a, stack).map_err(|e| e.in_file(&path))?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::init_uniform_pool;

    fn stack() -> ConfidenceStack {
        let a = Grid2D::from_rows(&[&[0.25, 0.5, 1.0], &[0.0, 3.0, 0.125]]).unwrap();
        let b = Grid2D::from_rows(&[&[1.0, 2.0, 4.0], &[8.0, 16.0, 32.0]]).unwrap();
        ConfidenceStack::new(vec![a, b], Frame::Original).unwrap()
    }

    #[test]
    fn heatmap_round_trip() {
        let s = stack();
        let bytes = encode_heatmaps(&s).unwrap();
        assert_eq!(bytes.len(), 20 + 4 * 12);
        assert_eq!(&bytes[..4], b"GMHM");
        assert_eq!(decode_heatmaps(&bytes).unwrap(), s);
    }

    #[test]
    fn heatmap_errors_carry_offsets() {
        let mut bytes = encode_heatmaps(&stack()).unwrap();
        let e = decode_heatmaps(&[]).unwrap_err();
        assert!(e.to_string().contains("empty"));

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        let e = decode_heatmaps(&bad).unwrap_err().to_string();
        assert!(e.contains("GMHM") && e.contains("XXXX"), "{e}");

        let e = decode_heatmaps(&bytes[..30]).unwrap_err();
        assert!(matches!(e, Error::Format { offset: 28, .. }), "{e}");

        bytes[20 + 4 * 5..24 + 4 * 5].copy_from_slice(&f32::NAN.to_le_bytes());
        let e = decode_heatmaps(&bytes).unwrap_err();
        assert!(matches!(e, Error::Format { offset: 40, .. }), "{e}");
    }

    #[test]
    fn pool_round_trip() {
        let tree = SkeletonTree::hand();
        let pool = init_uniform_pool(&tree, 3, 2).unwrap();
        let bytes = encode_pool(&pool).unwrap();
        let back = decode_pool(&bytes, &tree).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.radius(), 2);
        for (a, b) in back.models().iter().zip(pool.models()) {
            for (ka, kb) in a.kernels().iter().zip(b.kernels()) {
                for (x, y) in ka.values().iter().zip(kb.values()) {
                    assert_eq!(*x, *y as f32 as f64);
                }
            }
        }
        let e = decode_pool(&bytes, &SkeletonTree::chain(3).unwrap()).unwrap_err();
        assert!(e.to_string().contains("directed edges"));
    }

    #[test]
    fn floor_survives_narrowing() {
        let tree = SkeletonTree::chain(2).unwrap();
        let mut v = vec![KERNEL_FLOOR; 9];
        v[4] = 1.0;
        let k = PairwiseKernel::new(1, v).unwrap();
        let pool = ModelPool::new(vec![GraphicalModel::new(&tree, vec![k.clone(), k]).unwrap()]).unwrap();
        let back = decode_pool(&encode_pool(&pool).unwrap(), &tree).unwrap();
        assert!(back.min_entry() >= KERNEL_FLOOR);
    }

    #[test]
    fn jsonl_contract() {
        let text = r#"{"sample_id":"a","box":{"cx":1.0,"cy":2.0,"side":3.0},"keypoints":[[0.5,1.5]]}

{"sample_id":"b","box":{"cx":0.0,"cy":0.0,"side":1.0},"keypoints":[],"cluster_id":2,"prototype_id":1}
"#;
        let recs: Vec<Annotation> = decode_jsonl(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].cluster_id, None);
        assert_eq!(recs[1].cluster_id, Some(2));
        let again: Vec<Annotation> = decode_jsonl(&encode_jsonl(&recs).unwrap()).unwrap();
        assert_eq!(again, recs);

        assert!(matches!(decode_jsonl::<Annotation>(""), Err(Error::Parse { .. })));
        let e = decode_jsonl::<Annotation>("{\"sample_id\":\"a\"}\n{oops").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
    }
}
