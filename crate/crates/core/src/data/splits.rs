use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DataError, PlatformDataset};

/// Training platforms of the cross-platform protocol.
pub const PROTOCOL_TRAIN_PLATFORMS: [&str; 3] = ["fb-yt", "twitter", "wiki"];
/// Platform used for model selection in the cross-platform protocol.
pub const PROTOCOL_VALIDATION_PLATFORM: &str = "stormfront";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        })
    }
}

/// Assignment of platforms to train / validation / test roles. No platform
/// holds two roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub validation: Option<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    pub fn role_of(&self, platform: &str) -> Option<Role> {
        if self.train.iter().any(|p| p == platform) {
            Some(Role::Train)
        } else if self.validation.as_deref() == Some(platform) {
            Some(Role::Validation)
        } else if self.test.iter().any(|p| p == platform) {
            Some(Role::Test)
        } else {
            None
        }
    }

    pub fn platforms(&self, role: Role) -> Vec<&str> {
        match role {
            Role::Train => self.train.iter().map(String::as_str).collect(),
            Role::Validation => self.validation.iter().map(String::as_str).collect(),
            Role::Test => self.test.iter().map(String::as_str).collect(),
        }
    }

    /// Datasets holding `role`, in the plan's listed order.
    pub fn select<'a>(&self, datasets: &'a [PlatformDataset], role: Role) -> Vec<&'a PlatformDataset> {
        self.platforms(role)
            .into_iter()
            .filter_map(|name| datasets.iter().find(|d| d.platform == name))
            .collect()
    }
}

/// Validates a role assignment against the available datasets.
pub fn make_splits<S: AsRef<str>>(
    datasets: &[PlatformDataset],
    train: &[S],
    validation: Option<&str>,
    test: &[S],
) -> Result<SplitPlan, DataError> {
    let mut seen: Vec<(String, Role)> = Vec::new();
    let mut assign = |name: &'_ str, role: Role| -> Result<(), DataError> {
        if !datasets.iter().any(|d| d.platform == name) {
            return Err(DataError::UnknownPlatform(name.to_owned()));
        }
        if let Some(&(_, first)) = seen.iter().find(|(n, _)| *n == name) {
            return Err(DataError::RoleOverlap {
                platform: name.to_owned(),
                first,
                second: role,
            });
        }
        seen.push((name.to_owned(), role));
        Ok(())
    };
    for p in train {
        assign(p.as_ref(), Role::Train)?;
    }
    if let Some(v) = validation {
        assign(v, Role::Validation)?;
    }
    for p in test {
        assign(p.as_ref(), Role::Test)?;
    }
    Ok(SplitPlan {
        train: train.iter().map(|s| s.as_ref().to_owned()).collect(),
        validation: validation.map(str::to_owned),
        test: test.iter().map(|s| s.as_ref().to_owned()).collect(),
    })
}

/// The cross-platform protocol: train on fb-yt, twitter and wiki, select on
/// stormfront, test on every other platform present (in dataset order).
pub fn protocol_split(datasets: &[PlatformDataset]) -> Result<SplitPlan, DataError> {
    let test: Vec<&str> = datasets
        .iter()
        .map(|d| d.platform.as_str())
        .filter(|p| !PROTOCOL_TRAIN_PLATFORMS.contains(p) && *p != PROTOCOL_VALIDATION_PLATFORM)
        .collect();
    make_splits(datasets, &PROTOCOL_TRAIN_PLATFORMS, Some(PROTOCOL_VALIDATION_PLATFORM), &test)
}
