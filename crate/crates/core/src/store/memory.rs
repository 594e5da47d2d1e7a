use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use super::{ConditionsStore, HealthReport, ResolutionStrategy, RowCounts, SCHEMA_VERSION};
use crate::domain::{
    validate_name, Clock, GlobalTag, GlobalTagDescription, GlobalTagStatus, NewPayloadIov,
    PayloadIov, PayloadList, PayloadListSummary, PayloadType, ResolutionResult, SystemClock,
};
use crate::error::{EntityKind, StoreError, StoreResult};
use crate::iov::IovPoint;

#[derive(Default)]
struct State {
    tags: BTreeMap<String, GlobalTag>,
    types: BTreeMap<String, PayloadType>,
    /// Keyed by `(tag, type)`.
    lists: HashMap<(String, String), ListState>,
    next_list_id: i64,
}

struct ListState {
    id: i64,
    iovs: BTreeMap<u64, PayloadIov>,
}

impl State {
    fn tag(&self, name: &str) -> StoreResult<&GlobalTag> {
        self.tags.get(name).ok_or_else(|| StoreError::NotFound {
            kind: EntityKind::GlobalTag,
            name: name.to_owned(),
        })
    }

    fn writable_list(&mut self, tag: &str, payload_type: &str) -> StoreResult<&mut ListState> {
        if self.tag(tag)?.status.is_locked() {
            return Err(StoreError::Locked(tag.to_owned()));
        }
        if !self.types.contains_key(payload_type) {
            return Err(StoreError::NotFound {
                kind: EntityKind::PayloadType,
                name: payload_type.to_owned(),
            });
        }
        self.lists
            .get_mut(&(tag.to_owned(), payload_type.to_owned()))
            .ok_or_else(|| StoreError::NotFound {
                kind: EntityKind::PayloadList,
                name: format!("{tag}/{payload_type}"),
            })
    }
}

/// Tiny in-process database with the same observable behaviour as
/// [`super::SqliteStore`]. Nothing is persisted.
pub struct MemoryStore {
    state: RwLock<State>,
    clock: Arc<dyn Clock>,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::with_clock(Arc::new(SystemClock))
    }

    pub fn with_clock(clock: Arc<dyn Clock>) -> Self {
        Self {
            state: RwLock::new(State {
                next_list_id: 1,
                ..State::default()
            }),
            clock,
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|p| p.into_inner())
    }
}

impl ConditionsStore for MemoryStore {
    fn migrate(&self) -> StoreResult<()> {
        Ok(())
    }

    fn create_global_tag(&self, name: &str) -> StoreResult<GlobalTag> {
        validate_name("global tag", name)?;
        let mut state = self.write();
        if state.tags.contains_key(name) {
            return Err(StoreError::AlreadyExists {
                kind: EntityKind::GlobalTag,
                name: name.to_owned(),
            });
        }
        let tag = GlobalTag {
            name: name.to_owned(),
            status: GlobalTagStatus::Unlocked,
            created_at: self.clock.now(),
        };
        state.tags.insert(name.to_owned(), tag.clone());
        Ok(tag)
    }

    fn set_global_tag_status(&self, name: &str, status: GlobalTagStatus) -> StoreResult<GlobalTag> {
        let mut state = self.write();
        let tag = state.tags.get_mut(name).ok_or_else(|| StoreError::NotFound {
            kind: EntityKind::GlobalTag,
            name: name.to_owned(),
        })?;
        tag.status = status;
        Ok(tag.clone())
    }

    fn create_payload_type(&self, name: &str) -> StoreResult<PayloadType> {
        validate_name("payload type", name)?;
        let mut state = self.write();
        if state.types.contains_key(name) {
            return Err(StoreError::AlreadyExists {
                kind: EntityKind::PayloadType,
                name: name.to_owned(),
            });
        }
        let ty = PayloadType { name: name.to_owned() };
        state.types.insert(name.to_owned(), ty.clone());
        Ok(ty)
    }

    fn attach_payload_list(&self, tag: &str, payload_type: &str) -> StoreResult<PayloadList> {
        let mut state = self.write();
        if state.tag(tag)?.status.is_locked() {
            return Err(StoreError::Locked(tag.to_owned()));
        }
        if !state.types.contains_key(payload_type) {
            return Err(StoreError::NotFound {
                kind: EntityKind::PayloadType,
                name: payload_type.to_owned(),
            });
        }
        let key = (tag.to_owned(), payload_type.to_owned());
        if state.lists.contains_key(&key) {
            return Err(StoreError::AlreadyExists {
                kind: EntityKind::PayloadList,
                name: format!("{tag}/{payload_type}"),
            });
        }
        let id = state.next_list_id;
        state.next_list_id += 1;
        state.lists.insert(
            key,
            ListState {
                id,
                iovs: BTreeMap::new(),
            },
        );
        Ok(PayloadList {
            id,
            global_tag: tag.to_owned(),
            payload_type: payload_type.to_owned(),
        })
    }

    fn insert_payload_iov(&self, tag: &str, payload_type: &str, iov: NewPayloadIov) -> StoreResult<PayloadIov> {
        iov.validate()?;
        let now = self.clock.now();
        let mut state = self.write();
        let list = state.writable_list(tag, payload_type)?;
        let key = iov.start.combined().value();
        if let Some(existing) = list.iovs.get(&key) {
            return Err(StoreError::DuplicateStart {
                list: format!("{tag}/{payload_type}"),
                existing: existing.start(),
            });
        }
        let stored = iov.stamp(now);
        list.iovs.insert(key, stored.clone());
        Ok(stored)
    }

    fn insert_payload_iovs_bulk(&self, tag: &str, payload_type: &str, iovs: Vec<NewPayloadIov>) -> StoreResult<usize> {
        let now = self.clock.now();
        let mut state = self.write();
        let list = state.writable_list(tag, payload_type)?;
        // All-or-nothing: validate the whole batch first.
        let mut seen = std::collections::HashSet::new();
        for iov in &iovs {
            iov.validate()?;
            let key = iov.start.combined().value();
            if list.iovs.contains_key(&key) || !seen.insert(key) {
                return Err(StoreError::DuplicateStart {
                    list: format!("{tag}/{payload_type}"),
                    existing: iov.start,
                });
            }
        }
        let n = iovs.len();
        for iov in iovs {
            list.iovs.insert(iov.start.combined().value(), iov.stamp(now));
        }
        Ok(n)
    }

    fn resolve_payload_iovs(
        &self,
        tag: &str,
        point: IovPoint,
        _strategy: ResolutionStrategy,
    ) -> StoreResult<Vec<ResolutionResult>> {
        let state = self.read();
        state.tag(tag)?;
        let query = point.combined().value();
        let mut out: Vec<ResolutionResult> = state
            .lists
            .iter()
            .filter(|((t, _), _)| t == tag)
            .filter_map(|((_, ty), list)| {
                list.iovs.range(..=query).next_back().map(|(_, iov)| ResolutionResult {
                    payload_type: ty.clone(),
                    payload_iov: iov.clone(),
                })
            })
            .collect();
        out.sort_by(|a, b| a.payload_type.cmp(&b.payload_type));
        Ok(out)
    }

    fn list_global_tags(&self) -> StoreResult<Vec<GlobalTag>> {
        Ok(self.read().tags.values().cloned().collect())
    }

    fn list_payload_types(&self) -> StoreResult<Vec<PayloadType>> {
        Ok(self.read().types.values().cloned().collect())
    }

    fn describe_global_tag(&self, name: &str) -> StoreResult<GlobalTagDescription> {
        let state = self.read();
        let tag = state.tag(name)?.clone();
        let mut payload_lists: Vec<PayloadListSummary> = state
            .lists
            .iter()
            .filter(|((t, _), _)| t == name)
            .map(|((_, ty), list)| PayloadListSummary {
                id: list.id,
                payload_type: ty.clone(),
                iov_count: list.iovs.len() as u64,
            })
            .collect();
        payload_lists.sort_by(|a, b| a.payload_type.cmp(&b.payload_type));
        Ok(GlobalTagDescription {
            name: tag.name,
            status: tag.status,
            created_at: tag.created_at,
            payload_lists,
        })
    }

    fn list_payload_iovs(&self, tag: &str, payload_type: &str) -> StoreResult<Vec<PayloadIov>> {
        let state = self.read();
        state.tag(tag)?;
        if !state.types.contains_key(payload_type) {
            return Err(StoreError::NotFound {
                kind: EntityKind::PayloadType,
                name: payload_type.to_owned(),
            });
        }
        let list = state
            .lists
            .get(&(tag.to_owned(), payload_type.to_owned()))
            .ok_or_else(|| StoreError::NotFound {
                kind: EntityKind::PayloadList,
                name: format!("{tag}/{payload_type}"),
            })?;
        Ok(list.iovs.values().cloned().collect())
    }

    fn payload_urls(&self) -> StoreResult<Vec<String>> {
        let state = self.read();
        let mut urls: Vec<String> = state
            .lists
            .values()
            .flat_map(|l| l.iovs.values().map(|i| i.payload_url.clone()))
            .collect();
        urls.sort();
        urls.dedup();
        Ok(urls)
    }

    fn health(&self) -> StoreResult<HealthReport> {
        let state = self.read();
        Ok(HealthReport {
            schema_version: SCHEMA_VERSION,
            row_counts: RowCounts {
                global_tags: state.tags.len() as u64,
                payload_types: state.types.len() as u64,
                payload_lists: state.lists.len() as u64,
                payload_iovs: state.lists.values().map(|l| l.iovs.len() as u64).sum(),
            },
        })
    }
}
