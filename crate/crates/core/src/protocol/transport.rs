use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::SiteNode;

/// Moves one request to a set of sites and their raw responses back.
pub trait Transport {
    /// Returns `(site_id, payload bytes)` for every site that answered.
    fn exchange(
        &mut self,
        session: &str,
        round: u32,
        request: &[u8],
        sites: &[u32],
    ) -> Result<Vec<(u32, Vec<u8>)>>;
}

/// Sites answer by direct function call.
#[derive(Debug, Default)]
pub struct InProcessTransport {
    nodes: BTreeMap<u32, SiteNode>,
}

impl InProcessTransport {
    pub fn new(nodes: impl IntoIterator<Item = SiteNode>) -> Self {
        InProcessTransport {
            nodes: nodes.into_iter().map(|n| (n.site_id(), n)).collect(),
        }
    }

    pub fn site_ids(&self) -> Vec<u32> {
        self.nodes.keys().copied().collect()
    }
}

impl Transport for InProcessTransport {
    fn exchange(
        &mut self,
        _session: &str,
        _round: u32,
        request: &[u8],
        sites: &[u32],
    ) -> Result<Vec<(u32, Vec<u8>)>> {
        let mut out = Vec::with_capacity(sites.len());
        for &site in sites {
            if let Some(node) = self.nodes.get(&site) {
                out.push((site, node.serve(request).map_err(|e| e.at_site(site))?));
            }
        }
        Ok(out)
    }
}

/// Sites exchange files under a shared directory:
///
/// ```text
/// <root>/<session>/round<R>/request.json
/// <root>/<session>/round<R>/round<R>_site<ID>.payload
/// <root>/<session>/round<R>/complete
/// ```
///
/// Each site writes its payload to a temporary name and renames it. The
/// `complete` marker is written once all sites have been asked to respond;
/// after that a missing payload file is a hard error.
#[derive(Debug)]
pub struct FileDropTransport {
    root: PathBuf,
    nodes: BTreeMap<u32, SiteNode>,
}

impl FileDropTransport {
    pub fn new(root: impl Into<PathBuf>, nodes: impl IntoIterator<Item = SiteNode>) -> Self {
        FileDropTransport {
            root: root.into(),
            nodes: nodes.into_iter().map(|n| (n.site_id(), n)).collect(),
        }
    }

    pub fn round_dir(&self, session: &str, round: u32) -> PathBuf {
        self.root.join(session).join(format!("round{round}"))
    }
}

pub fn payload_file_name(round: u32, site: u32) -> String {
    format!("round{round}_site{site}.payload")
}

fn site_respond(node: &SiteNode, dir: &Path, round: u32) -> Result<()> {
    let request = fs::read(dir.join("request.json"))?;
    let bytes = node.serve(&request)?;
    let name = payload_file_name(round, node.site_id());
    let tmp = dir.join(format!("{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, dir.join(name))?;
    Ok(())
}

/// Read every addressed site's payload file from a completed round directory.
pub fn collect_round(dir: &Path, round: u32, sites: &[u32]) -> Result<Vec<(u32, Vec<u8>)>> {
    if !dir.join("complete").exists() {
        return Err(Error::IncompleteRound {
            round,
            missing: sites.to_vec(),
        });
    }
    let mut out = Vec::with_capacity(sites.len());
    let mut missing = Vec::new();
    for &site in sites {
        match fs::read(dir.join(payload_file_name(round, site))) {
            Ok(bytes) => out.push((site, bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => missing.push(site),
            Err(e) => return Err(e.into()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteRound {
            round,
            missing,
        });
    }
    Ok(out)
}

impl Transport for FileDropTransport {
    fn exchange(
        &mut self,
        session: &str,
        round: u32,
        request: &[u8],
        sites: &[u32],
    ) -> Result<Vec<(u32, Vec<u8>)>> {
        let dir = self.round_dir(session, round);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("request.json"), request)?;
        for &site in sites {
            if let Some(node) = self.nodes.get(&site) {
                site_respond(node, &dir, round).map_err(|e| e.at_site(site))?;
            }
        }
        fs::write(dir.join("complete"), b"")?;
        collect_round(&dir, round, sites)
    }
}
