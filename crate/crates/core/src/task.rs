use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// In-hospital mortality.
    Ihm,
    /// Short ICU stay (< 96 h) with survival.
    Los,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ihm => "ihm",
            Task::Los => "los",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ihm" => Ok(Task::Ihm),
            "los" => Ok(Task::Los),
            other => Err(Error::TaskConfig(format!("unknown task `{other}`"))),
        }
    }
}

/// Class letters, display names and the positive class of a prediction task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: Task,
    pub class_letters: BTreeMap<usize, char>,
    pub class_names: BTreeMap<usize, String>,
    pub positive_class: usize,
    pub horizon_hours: f64,
}

impl TaskConfig {
    pub fn new(
        task: Task,
        classes: &[(char, &str)],
        positive_class: usize,
        horizon_hours: f64,
    ) -> Result<Self> {
        let cfg = TaskConfig {
            task,
            class_letters: classes.iter().enumerate().map(|(i, (l, _))| (i, *l)).collect(),
            class_names: classes
                .iter()
                .enumerate()
                .map(|(i, (_, n))| (i, n.to_string()))
                .collect(),
            positive_class,
            horizon_hours,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A = SURVIVAL, B = MORTALITY; MORTALITY is positive.
    pub fn ihm() -> Self {
        Self::new(Task::Ihm, &[('A', "SURVIVAL"), ('B', "MORTALITY")], 1, 24.0)
            .expect("IHM task config is valid")
    }

    /// A = LONG_STAY, B = SHORT_STAY; SHORT_STAY is positive.
    pub fn los() -> Self {
        Self::new(Task::Los, &[('A', "LONG_STAY"), ('B', "SHORT_STAY")], 1, 24.0)
            .expect("LOS task config is valid")
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Ihm => Self::ihm(),
            Task::Los => Self::los(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (&idx, &letter) in &self.class_letters {
            if !letter.is_ascii_uppercase() {
                return Err(Error::TaskConfig(format!(
                    "class {idx} letter `{letter}` is not an uppercase ASCII letter"
                )));
            }
            if !seen.insert(letter) {
                return Err(Error::TaskConfig(format!("letter `{letter}` is used twice")));
            }
        }
        let k = self.num_classes();
        if k < 2 {
            return Err(Error::TaskConfig("at least two classes are required".into()));
        }
        if self.class_letters.keys().copied().ne(0..k) {
            return Err(Error::TaskConfig("class indices must be 0..K".into()));
        }
        if self.positive_class >= k {
            return Err(Error::TaskConfig(format!(
                "positive class {} is not a valid class index",
                self.positive_class
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_letters.len()
    }

    pub fn letter(&self, class: usize) -> Result<char> {
        self.class_letters
            .get(&class)
            .copied()
            .ok_or_else(|| Error::InvalidLabel {
                label: class,
                task: self.task.to_string(),
            })
    }

    pub fn class_of_letter(&self, letter: char) -> Option<usize> {
        self.class_letters
            .iter()
            .find(|(_, &l)| l == letter)
            .map(|(&i, _)| i)
    }

    /// Letters in class-index order.
    pub fn letters(&self) -> Vec<char> {
        self.class_letters.values().copied().collect()
    }

    pub fn is_positive(&self, label: usize) -> bool {
        label == self.positive_class
    }
}
