use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GenerateError, ImageGateway, ImageRequest};
use crate::rules::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusRow {
    pub category: String,
    pub prompt: String,
    pub digest: String,
    pub path: String,
}

/// Images shown on questionnaire slides, one row per file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusManifest {
    pub rows: Vec<StimulusRow>,
}

impl StimulusManifest {
    pub fn categories(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.category.as_str()) {
                seen.push(&row.category);
            }
        }
        seen
    }

    pub fn count_for(&self, category: &str) -> usize {
        self.rows.iter().filter(|r| r.category == category).count()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = crate::csv_writer(Vec::new());
        w.write_record(["category", "prompt", "digest", "path"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([&r.category, &r.prompt, &r.digest, &r.path]).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn read_csv(path: &Path) -> Result<Self, csv::Error> {
        let mut reader = csv::Reader::from_path(path)?;
        let rows = reader.deserialize().collect::<Result<Vec<StimulusRow>, _>>()?;
        Ok(StimulusManifest { rows })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StimulusError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn slug(category: &str) -> String {
    category
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Generates `per` images for each category, writing PNGs into `out_dir`.
pub async fn generate_stimuli(
    gateway: &ImageGateway,
    categories: &[String],
    per: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<StimulusManifest, StimulusError> {
    let mut manifest = StimulusManifest::default();
    if per > 0 {
        std::fs::create_dir_all(out_dir)
            .map_err(|source| StimulusError::Io { path: out_dir.to_path_buf(), source })?;
    }
    for category in categories {
        for i in 0..per {
            let mut request =
                ImageRequest::new(category.clone(), derive_seed(seed, category, i as u64));
            request.category = Some(category.clone());
            let result = gateway.generate(&request).await?;
            let file = format!("{}_{:02}.png", slug(category), i + 1);
            let path = out_dir.join(&file);
            if let Some(bytes) = result.bytes() {
                std::fs::write(&path, bytes)
                    .map_err(|source| StimulusError::Io { path: path.clone(), source })?;
            }
            manifest.rows.push(StimulusRow {
                category: category.clone(),
                prompt: request.prompt,
                digest: result.content_digest,
                path: file,
            });
        }
    }
    Ok(manifest)
}
