//! String identifiers for the entities that flow through the pipeline.

use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Provincial region identifier.
    ProvinceId
);
string_id!(
    /// Generating unit identifier, unique within a bundle.
    PlantId
);
string_id!(
    /// Owning group (one of the large state groups, local, private, captive, other).
    Company
);
string_id!(
    /// Opaque key for an APCD combination such as `SCR+WFGD+ESP`.
    ComboKey
);
string_id!(
    /// Food product category label.
    Category
);
