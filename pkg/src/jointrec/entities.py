"""Entity identities shared by every matrix in a dataset.

An entity is identified by an exact (namespace, key) pair. Users and items
live in the two global namespaces; every data source gets its own attribute
namespace, so attribute keys never collide across sources.
"""

from __future__ import annotations

from dataclasses import dataclass

USER_NAMESPACE = "user"
ITEM_NAMESPACE = "item"


@dataclass(frozen=True, slots=True)
class EntityId:
    """Identity of a user, item, or source attribute.

    Equality is exact byte equality of (namespace, key); there is no fuzzy
    linking of entities across datasets.
    """

    namespace: str
    key: str

    def __repr__(self) -> str:
        return f"{self.namespace}:{self.key}"


def user(key: str) -> EntityId:
    return EntityId(USER_NAMESPACE, key)


def item(key: str) -> EntityId:
    return EntityId(ITEM_NAMESPACE, key)


def attribute_namespace(kind: str, index: int) -> str:
    """Namespace for the attribute columns of one data source.

    `kind` is "user" or "item" (the kind of entity the source describes)
    and `index` is the 1-based source index within that kind.
    """
    return f"{kind}-source-{index}-attr"
