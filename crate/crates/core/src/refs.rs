use std::fmt;

use serde::{Deserialize, Serialize};

/// Engine tick number. Ticks start at 1; 0 means "before the first tick".
pub type Tick = u64;

/// Reference to an element of a managed model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelElementRef {
    pub model: String,
    pub element: String,
}

impl ModelElementRef {
    pub fn new(model: impl Into<String>, element: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            element: element.into(),
        }
    }
}

impl fmt::Display for ModelElementRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.model, self.element)
    }
}

/// Reference to one property of a model element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PropertyRef {
    pub model: String,
    pub element: String,
    pub property: String,
}

impl PropertyRef {
    pub fn new(
        model: impl Into<String>,
        element: impl Into<String>,
        property: impl Into<String>,
    ) -> Self {
        Self {
            model: model.into(),
            element: element.into(),
            property: property.into(),
        }
    }

    pub fn element_ref(&self) -> ModelElementRef {
        ModelElementRef::new(self.model.clone(), self.element.clone())
    }
}

impl fmt::Display for PropertyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}.{}", self.model, self.element, self.property)
    }
}
