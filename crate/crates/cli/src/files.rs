use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use handgm::dataset::Sample;
use handgm::io::{encode_heatmaps, encode_jsonl, heatmap_path, ANNOTATIONS_FILE, HEATMAP_DIR};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Heatmaps first, annotations last: a dataset without its annotation file
/// is never mistaken for a complete one.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir.join(HEATMAP_DIR)).with_context(|| format!("creating {}", dir.display()))?;
    for s in samples {
        write_atomic(&heatmap_path(dir, &s.id), &encode_heatmaps(&s.unaries)?)?;
    }
    let records: Vec<_> = samples.iter().map(Sample::annotation).collect();
    write_atomic(&dir.join(ANNOTATIONS_FILE), encode_jsonl(&records)?.as_bytes())
}
