use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use sha2::{Digest, Sha256};

use super::lexicon::Lexicon;
use super::{ImageData, ImageResult};

pub const STUB_BACKEND_ID: &str = "stub";
const GRID: u32 = 4;
const CELL: u32 = 16;

/// Deterministic placeholder generator: a colour grid keyed on (seed, prompt)
/// plus lexicon-derived pseudo scores.
#[derive(Debug, Clone)]
pub struct StubBackend {
    lexicon: Lexicon,
}

impl Default for StubBackend {
    fn default() -> Self {
        StubBackend { lexicon: Lexicon::builtin() }
    }
}

impl StubBackend {
    pub fn new(lexicon: Lexicon) -> Self {
        StubBackend { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn stub_generate(&self, prompt: &str, category: Option<&str>, seed: u64) -> ImageResult {
        let png = placeholder_png(prompt, seed);
        ImageResult {
            content_digest: super::digest_hex(&png),
            image: ImageData::Png(png),
            latency_ms: 0,
            backend: STUB_BACKEND_ID.to_string(),
            retries: 0,
            pseudo_scores: Some(self.lexicon.score(prompt, category)),
        }
    }
}

fn placeholder_png(prompt: &str, seed: u64) -> Vec<u8> {
    let first = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(prompt.as_bytes()).finalize();
    let second = Sha256::digest(first);
    let palette: Vec<u8> = first.iter().chain(second.iter()).copied().collect();
    let img = RgbImage::from_fn(GRID * CELL, GRID * CELL, |x, y| {
        let cell = ((y / CELL) * GRID + x / CELL) as usize * 3;
        Rgb([palette[cell], palette[cell + 1], palette[cell + 2]])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory png encode");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_inputs_same_digest() {
        let stub = StubBackend::default();
        let a = stub.stub_generate("construction workers hard hats", None, 7);
        let b = stub.stub_generate("construction workers hard hats", None, 7);
        assert_eq!(a.content_digest, b.content_digest);
        assert_ne!(a.content_digest, stub.stub_generate("construction workers hard hats", None, 8).content_digest);
    }

    #[test]
    fn digest_matches_bytes_and_scores_present() {
        let stub = StubBackend::default();
        let r = stub.stub_generate("women elderly", Some("teachers"), 1);
        let ImageData::Png(bytes) = &r.image else { panic!("stub returns bytes") };
        assert_eq!(r.content_digest, crate::imagegen::digest_hex(bytes));
        assert_eq!(&bytes[1..4], b"PNG");
        assert_eq!(r.pseudo_scores.unwrap().diversity_cue, 2);
        let empty = stub.stub_generate("", Some("teachers"), 1).pseudo_scores.unwrap();
        assert_eq!((empty.diversity_cue, empty.category_match), (0, 0));
    }

    #[test]
    fn fast_enough() {
        let stub = StubBackend::default();
        let start = std::time::Instant::now();
        stub.stub_generate("teachers with canes", Some("teachers"), 3);
        assert!(start.elapsed().as_millis() < 50);
    }
}
