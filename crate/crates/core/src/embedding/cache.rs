use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{checked_text, Capabilities, EmbeddingProvider, SemanticVector};
use crate::error::{Error, Result};
use crate::renderer::FrameImage;

const MAGIC: &[u8; 4] = b"MAEV";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// SHA-256 of the trimmed text, prefixed by a domain tag.
pub fn cache_key_text(text: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(b"text\0");
    h.update(checked_text(text)?.as_bytes());
    Ok(hex::encode(h.finalize()))
}

/// SHA-256 of the image size and raw RGB bytes.
pub fn cache_key_image(image: &FrameImage) -> String {
    let mut h = Sha256::new();
    h.update(b"image\0");
    h.update(image.width().to_le_bytes());
    h.update(image.height().to_le_bytes());
    h.update(image.bytes());
    hex::encode(h.finalize())
}

/// Directory of embedding files scoped to one provider id.
///
/// Each entry is a 16-byte header (magic, version, dimension, reserved; all
/// little-endian) followed by `dim` little-endian `f64`s. Writes go through a
/// temporary file and an atomic rename, so concurrent readers never see a
/// partial entry.
#[derive(Clone, Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn open(root: impl AsRef<Path>, provider_id: &str) -> Result<Self> {
        let scope: String = provider_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let dir = root.as_ref().join(scope);
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.emb"))
    }

    pub fn get(&self, key: &str) -> Result<Option<SemanticVector>> {
        let bytes = match fs::read(self.path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        decode_entry(&bytes).map(Some)
    }

    pub fn put(&self, key: &str, v: &SemanticVector) -> Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&encode_entry(v))?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path(key))
            .map_err(|e| Error::Io(e.error))?;
        Ok(())
    }
}

pub(crate) fn encode_entry(v: &SemanticVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * v.dim());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for x in v.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub(crate) fn decode_entry(bytes: &[u8]) -> Result<SemanticVector> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Integrity(
            "embedding cache entry has a bad header".into(),
        ));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != VERSION {
        return Err(Error::Integrity(format!(
            "embedding cache version {}",
            word(4)
        )));
    }
    let dim = word(8) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != dim * 8 {
        return Err(Error::Integrity(
            "embedding cache entry is truncated".into(),
        ));
    }
    SemanticVector::new(
        body.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    )
}

/// Provider wrapper that consults an [`EmbeddingCache`] before the inner provider.
pub struct CachedProvider<P> {
    inner: P,
    cache: EmbeddingCache,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, root: impl AsRef<Path>) -> Result<Self> {
        let cache = EmbeddingCache::open(root, inner.provider_id())?;
        Ok(Self { inner, cache })
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn through(
        &self,
        key: String,
        compute: impl FnOnce() -> Result<SemanticVector>,
    ) -> Result<SemanticVector> {
        if let Some(v) = self.cache.get(&key)? {
            if v.dim() == self.inner.dimension() {
                return Ok(v);
            }
            log::warn!("ignoring cached embedding {key} with dimension {}", v.dim());
        }
        let v = compute()?;
        self.cache.put(&key, &v)?;
        Ok(v)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn capabilities(&self) -> &Capabilities {
        self.inner.capabilities()
    }

    fn embed_text(&self, text: &str) -> Result<SemanticVector> {
        let key = cache_key_text(text)?;
        self.through(key, || self.inner.embed_text(text))
    }

    fn embed_image(&self, image: &FrameImage) -> Result<SemanticVector> {
        let key = cache_key_image(image);
        self.through(key, || self.inner.embed_image(image))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::StubProvider;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: StubProvider,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn capabilities(&self) -> &Capabilities {
            self.inner.capabilities()
        }
        fn embed_text(&self, text: &str) -> Result<SemanticVector> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed_text(text)
        }
        fn embed_image(&self, image: &FrameImage) -> Result<SemanticVector> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed_image(image)
        }
    }

    #[test]
    fn cache_hits_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = CachedProvider::new(
            Counting {
                inner: StubProvider::new(16, 3).unwrap(),
                calls: AtomicUsize::new(0),
            },
            dir.path(),
        )
        .unwrap();
        let a = p.embed_text("wave hello").unwrap();
        let b = p.embed_text(" wave hello ").unwrap();
        assert_eq!(a, b);
        assert_eq!(p.inner().calls.load(Ordering::SeqCst), 1);
        let key = cache_key_text("wave hello").unwrap();
        let raw = fs::read(p.cache().dir().join(format!("{key}.emb"))).unwrap();
        assert_eq!(raw.len(), 16 + 16 * 8);
        assert_eq!(&raw[..4], b"MAEV");
        assert_eq!(raw, encode_entry(&a));
    }

    #[test]
    fn truncated_entry_is_an_integrity_error() {
        let v = SemanticVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = encode_entry(&v);
        bytes.pop();
        assert!(matches!(decode_entry(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn scopes_are_separate_per_provider() {
        let dir = tempfile::tempdir().unwrap();
        let a = CachedProvider::new(StubProvider::new(8, 1).unwrap(), dir.path()).unwrap();
        let b = CachedProvider::new(StubProvider::new(8, 2).unwrap(), dir.path()).unwrap();
        assert_ne!(a.cache().dir(), b.cache().dir());
        assert_ne!(a.embed_text("jump").unwrap(), b.embed_text("jump").unwrap());
    }
}
