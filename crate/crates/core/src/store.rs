//! Centralized VNF image store plus per-VWSN-domain image caches.
//!
//! Images are content-addressed: the id is derived from the SHA-256 digest
//! of the blob, so equal content yields equal ids and ids survive restarts.
//! On disk the store is `<root>/images/<image_id>` plus `<root>/index.json`
//! (rewritten atomically on every publish). Domain caches are runtime
//! bookkeeping — they track which images have already been transferred into
//! a VWSN domain and deliberately do not persist.

use crate::model::{DomainId, VnfType};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Registered image metadata. `size_bytes` is the stored blob length; the
/// migration cost model uses the (usually much larger) declared size from
/// the VNF descriptor instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VnfImage {
    pub image_id: String,
    pub vnf_type: VnfType,
    pub version: u32,
    pub size_bytes: u64,
    /// Hex-encoded SHA-256 of the blob (32 bytes).
    pub digest: String,
}

/// Cache lookup outcome; drives cold-vs-warm migration cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheLookup {
    Hit,
    Miss,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("image for {vnf_type:?} version {version} already published")]
    DuplicateVersion { vnf_type: VnfType, version: u32 },
    #[error("image {0} not found")]
    NotFound(String),
    #[error("image {image_id} failed integrity check: stored digest {expected}, content hashes to {actual}")]
    IntegrityError { image_id: String, expected: String, actual: String },
    #[error("domain {0} hosts no image cache")]
    NotVwsnDomain(DomainId),
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    images: Vec<VnfImage>,
}

#[derive(Debug, Default)]
struct StoreInner {
    by_id: BTreeMap<String, VnfImage>,
    versions: BTreeSet<(VnfType, u32)>,
    caches: BTreeMap<DomainId, BTreeSet<String>>,
}

/// Filesystem-backed image registry. Safe to share behind `Arc`: reads are
/// cheap snapshots, publishes serialize on the internal lock.
#[derive(Debug)]
pub struct ImageStore {
    root: PathBuf,
    inner: Mutex<StoreInner>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_of(content: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex(&Sha256::digest(content))
}

fn image_id_from_digest(digest_hex: &str) -> String {
    format!("img-{}", &digest_hex[..24])
}

/// The id [`ImageStore::publish_image`] would assign to this content.
/// Ids are content-derived, so every store agrees on them without
/// coordination.
pub fn image_id_for_content(content: &[u8]) -> String {
    image_id_from_digest(&digest_of(content))
}

impl ImageStore {
    /// Opens (or initializes) a store rooted at `root`, reloading any
    /// previously published images from the index.
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(root.join("images"))?;
        let mut inner = StoreInner::default();
        for domain in [DomainId::Vwsn1, DomainId::Vwsn2] {
            inner.caches.insert(domain, BTreeSet::new());
        }
        let index_path = root.join("index.json");
        if index_path.exists() {
            let text = std::fs::read_to_string(&index_path)?;
            let index: Index =
                serde_json::from_str(&text).map_err(|e| StoreError::CorruptIndex(e.to_string()))?;
            for img in index.images {
                inner.versions.insert((img.vnf_type, img.version));
                inner.by_id.insert(img.image_id.clone(), img);
            }
        }
        Ok(ImageStore { root: root.to_path_buf(), inner: Mutex::new(inner) })
    }

    fn blob_path(&self, image_id: &str) -> PathBuf {
        self.root.join("images").join(image_id)
    }

    fn write_index(&self, inner: &StoreInner) -> Result<(), StoreError> {
        let index = Index { images: inner.by_id.values().cloned().collect() };
        let tmp = self.root.join("index.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&index).expect("index serializes"))?;
        std::fs::rename(&tmp, self.root.join("index.json"))?;
        Ok(())
    }

    /// Stores a new image blob. The returned id is a pure function of the
    /// content, so republishing identical bytes under a different version
    /// label is refused as a duplicate.
    pub fn publish_image(
        &self,
        vnf_type: VnfType,
        version: u32,
        content: &[u8],
    ) -> Result<String, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.versions.contains(&(vnf_type, version)) {
            return Err(StoreError::DuplicateVersion { vnf_type, version });
        }
        let digest = digest_of(content);
        let image_id = image_id_from_digest(&digest);
        if inner.by_id.contains_key(&image_id) {
            return Err(StoreError::DuplicateVersion { vnf_type, version });
        }
        std::fs::write(self.blob_path(&image_id), content)?;
        let image = VnfImage {
            image_id: image_id.clone(),
            vnf_type,
            version,
            size_bytes: content.len() as u64,
            digest,
        };
        inner.versions.insert((vnf_type, version));
        inner.by_id.insert(image_id.clone(), image);
        self.write_index(&inner)?;
        Ok(image_id)
    }

    /// Fetches metadata and content, verifying the content hash.
    pub fn fetch_image(&self, image_id: &str) -> Result<(VnfImage, Vec<u8>), StoreError> {
        let meta = self
            .inner
            .lock()
            .unwrap()
            .by_id
            .get(image_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(image_id.to_string()))?;
        let content = std::fs::read(self.blob_path(image_id))
            .map_err(|_| StoreError::NotFound(image_id.to_string()))?;
        let actual = digest_of(&content);
        if actual != meta.digest {
            return Err(StoreError::IntegrityError {
                image_id: image_id.to_string(),
                expected: meta.digest,
                actual,
            });
        }
        Ok((meta, content))
    }

    pub fn get_meta(&self, image_id: &str) -> Option<VnfImage> {
        self.inner.lock().unwrap().by_id.get(image_id).cloned()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.inner.lock().unwrap().by_id.contains_key(image_id)
    }

    pub fn images(&self) -> Vec<VnfImage> {
        self.inner.lock().unwrap().by_id.values().cloned().collect()
    }

    fn cache_of<'a>(
        inner: &'a mut StoreInner,
        domain: DomainId,
    ) -> Result<&'a mut BTreeSet<String>, StoreError> {
        inner.caches.get_mut(&domain).ok_or(StoreError::NotVwsnDomain(domain))
    }

    /// Whether `image_id` has already been transferred into `domain`.
    pub fn cache_check(&self, domain: DomainId, image_id: &str) -> Result<CacheLookup, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let cache = Self::cache_of(&mut inner, domain)?;
        Ok(if cache.contains(image_id) { CacheLookup::Hit } else { CacheLookup::Miss })
    }

    /// Records a completed transfer. Idempotent; only images known to the
    /// central store may be cached.
    pub fn cache_insert(&self, domain: DomainId, image_id: &str) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().unwrap();
        if !inner.by_id.contains_key(image_id) {
            return Err(StoreError::NotFound(image_id.to_string()));
        }
        Self::cache_of(&mut inner, domain)?.insert(image_id.to_string());
        Ok(())
    }

    pub fn cache_entries(&self, domain: DomainId) -> Result<BTreeSet<String>, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        Ok(Self::cache_of(&mut inner, domain)?.clone())
    }
}
