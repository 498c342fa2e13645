use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::CacheKey;

/// One file per key, named by the key's hex digest, holding the response text.
/// Entries are written once; a concurrent second writer leaves the first
/// entry in place.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ResponseCache {
            dir: dir.to_path_buf(),
        })
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.as_str())
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        fs::read_to_string(self.path_for(key)).ok()
    }

    pub fn put(&self, key: &CacheKey, text: &str) -> io::Result<()> {
        let target = self.path_for(key);
        if target.exists() {
            return Ok(());
        }
        let mut tmp = tempfile::Builder::new()
            .prefix(".pending-")
            .tempfile_in(&self.dir)?;
        tmp.write_all(text.as_bytes())?;
        tmp.flush()?;
        match tmp.persist_noclobber(&target) {
            Ok(_) => Ok(()),
            Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => Ok(()),
            Err(e) => Err(e.error),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, ChatRequest};

    #[test]
    fn first_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let key = ChatRequest {
            model: "m".into(),
            temperature: 1.0,
            messages: vec![ChatMessage::user("q")],
        }
        .cache_key();
        assert_eq!(cache.get(&key), None);
        cache.put(&key, "first").unwrap();
        cache.put(&key, "second").unwrap();
        assert_eq!(cache.get(&key).as_deref(), Some("first"));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
