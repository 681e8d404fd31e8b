use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The fixed dialogue-act inventory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActKind {
    Inform,
    Request,
    Confirm,
    Affirm,
    Deny,
    Correct,
    Offer,
    AcceptOffer,
    DeclineOffer,
    NotifyResult,
    Bye,
}

impl ActKind {
    pub const ALL: [ActKind; 11] = [
        ActKind::Inform,
        ActKind::Request,
        ActKind::Confirm,
        ActKind::Affirm,
        ActKind::Deny,
        ActKind::Correct,
        ActKind::Offer,
        ActKind::AcceptOffer,
        ActKind::DeclineOffer,
        ActKind::NotifyResult,
        ActKind::Bye,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActKind::Inform => "inform",
            ActKind::Request => "request",
            ActKind::Confirm => "confirm",
            ActKind::Affirm => "affirm",
            ActKind::Deny => "deny",
            ActKind::Correct => "correct",
            ActKind::Offer => "offer",
            ActKind::AcceptOffer => "accept_offer",
            ActKind::DeclineOffer => "decline_offer",
            ActKind::NotifyResult => "notify_result",
            ActKind::Bye => "bye",
        }
    }

    /// Whether the act names a target (a slot or an action).
    pub fn takes_target(self) -> bool {
        matches!(
            self,
            ActKind::Inform
                | ActKind::Request
                | ActKind::Confirm
                | ActKind::Correct
                | ActKind::Offer
                | ActKind::NotifyResult
        )
    }

    /// Whether the target of this act is a slot (argument name). `Request`
    /// may target a slot (system side) or an API (user side).
    pub fn targets_slot(self) -> bool {
        matches!(self, ActKind::Inform | ActKind::Correct)
    }
}

/// A dialogue act without values, as it appears in templates and
/// annotations: `inform(size)`, `request(OrderPizza)`,
/// `notify_result(FindMovies,failure)`, `affirm`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActLabel {
    pub kind: ActKind,
    pub target: Option<String>,
    /// Only meaningful for `notify_result`: the call returned the failure
    /// marker.
    pub failure: bool,
}

impl ActLabel {
    pub fn new(kind: ActKind, target: impl Into<String>) -> Self {
        ActLabel {
            kind,
            target: Some(target.into()),
            failure: false,
        }
    }

    pub fn bare(kind: ActKind) -> Self {
        ActLabel {
            kind,
            target: None,
            failure: false,
        }
    }

    pub fn failure(api: impl Into<String>) -> Self {
        ActLabel {
            kind: ActKind::NotifyResult,
            target: Some(api.into()),
            failure: true,
        }
    }
}

impl fmt::Display for ActLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.as_str())?;
        if let Some(target) = &self.target {
            write!(f, "({target}")?;
            if self.failure {
                f.write_str(",failure")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed dialogue act `{0}`")]
pub struct ActParseError(pub String);

impl FromStr for ActLabel {
    type Err = ActParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ActParseError(s.to_string());
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
                (&s[..open], Some(inner))
            }
            None => (s, None),
        };
        let kind = ActKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == name.trim())
            .ok_or_else(bad)?;
        let mut label = ActLabel::bare(kind);
        match (kind.takes_target(), args) {
            (true, Some(args)) => {
                let mut parts = args.split(',').map(str::trim);
                let target = parts.next().filter(|t| !t.is_empty()).ok_or_else(bad)?;
                label.target = Some(target.to_string());
                match parts.next() {
                    None => {}
                    Some("failure") if kind == ActKind::NotifyResult => label.failure = true,
                    Some(_) => return Err(bad()),
                }
                if parts.next().is_some() {
                    return Err(bad());
                }
            }
            (false, None) => {}
            _ => return Err(bad()),
        }
        Ok(label)
    }
}

impl Serialize for ActLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
