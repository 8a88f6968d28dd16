use std::fmt;

use serde::{Deserialize, Serialize};

/// Store key for a repository: `owner~name`, lowercased because hosting
/// services treat both parts case-insensitively. `~` never appears in owner
/// or repository names, so the key is safe in URL paths.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RepoId(pub String);

impl RepoId {
    pub fn new(owner: &str, name: &str) -> Self {
        RepoId(format!("{owner}~{name}").to_ascii_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RepoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositoryRef {
    /// Web base of the hosting service, e.g. `https://github.com`.
    pub host: String,
    pub owner: String,
    pub name: String,
    pub stars: u64,
    pub forks: u64,
    pub open_issue_count: u64,
    pub default_branch: String,
}

impl RepositoryRef {
    pub fn id(&self) -> RepoId {
        RepoId::new(&self.owner, &self.name)
    }

    /// `owner/name`, the form the prompts use.
    pub fn full_name(&self) -> String {
        format!("{}/{}", self.owner, self.name)
    }

    pub fn is_valid(&self) -> bool {
        !self.owner.is_empty() && !self.name.is_empty()
    }
}
