"""Hierarchical asset identity registry and device admission."""

from __future__ import annotations

import copy
import hashlib
import hmac
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping

from .errors import (
    BadCredential,
    CycleDetected,
    DuplicateId,
    IllegalTransition,
    LevelMismatch,
    UnknownDevice,
    UnknownNode,
    UnknownParent,
)


class Level(str, Enum):
    ENTERPRISE = "Enterprise"
    SITE = "Site"
    LINE = "Line"
    ASSET = "Asset"
    COMPONENT = "Component"
    SENSOR = "Sensor"

    @property
    def depth(self) -> int:
        return _LEVEL_ORDER.index(self)

    @property
    def key(self) -> str:
        return self.value.lower()


_LEVEL_ORDER = list(Level)


class Lifecycle(str, Enum):
    COMMISSIONING = "Commissioning"
    OPERATION = "Operation"
    MAINTENANCE = "Maintenance"
    DECOMMISSIONING = "Decommissioning"


ASSET_TRANSITIONS = {
    Lifecycle.COMMISSIONING: {Lifecycle.OPERATION},
    Lifecycle.OPERATION: {Lifecycle.MAINTENANCE, Lifecycle.DECOMMISSIONING},
    Lifecycle.MAINTENANCE: {Lifecycle.OPERATION},
    Lifecycle.DECOMMISSIONING: set(),
}


class DeviceState(str, Enum):
    PROVISIONED = "Provisioned"
    COMMISSIONED = "Commissioned"
    ACTIVE = "Active"
    SUSPENDED = "Suspended"
    REVOKED = "Revoked"


DEVICE_TRANSITIONS = {
    DeviceState.PROVISIONED: {DeviceState.COMMISSIONED},
    DeviceState.COMMISSIONED: {DeviceState.ACTIVE},
    DeviceState.ACTIVE: {DeviceState.SUSPENDED},
    DeviceState.SUSPENDED: {DeviceState.ACTIVE, DeviceState.REVOKED},
    DeviceState.REVOKED: set(),
}


@dataclass
class AssetNode:
    id: str
    level: Level
    parent: str | None = None
    attributes: dict[str, Any] = field(default_factory=dict)
    lifecycle: Lifecycle = Lifecycle.COMMISSIONING

    def __post_init__(self):
        self.level = Level(self.level)
        self.lifecycle = Lifecycle(self.lifecycle)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level.value,
            "parent": self.parent,
            "attributes": dict(self.attributes),
            "lifecycle": self.lifecycle.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AssetNode":
        return cls(
            id=data["id"],
            level=Level(data["level"]),
            parent=data.get("parent"),
            attributes=dict(data.get("attributes") or {}),
            lifecycle=Lifecycle(data.get("lifecycle", Lifecycle.COMMISSIONING.value)),
        )


def credential_digest(device_id: str, secret: str) -> str:
    """Keyed digest stored in place of the device's shared secret."""
    return hmac.new(device_id.encode(), secret.encode(), hashlib.sha256).hexdigest()


@dataclass
class DeviceIdentity:
    device_id: str
    asset_ref: str
    credential: str
    state: DeviceState = DeviceState.PROVISIONED

    def __post_init__(self):
        self.state = DeviceState(self.state)

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "asset_ref": self.asset_ref,
            "credential": self.credential,
            "state": self.state.value,
        }

    @classmethod
    def provision(cls, device_id: str, asset_ref: str, secret: str) -> "DeviceIdentity":
        return cls(device_id, asset_ref, credential_digest(device_id, secret))

    @classmethod
    def from_dict(cls, data: Mapping) -> "DeviceIdentity":
        return cls(
            device_id=data["device_id"],
            asset_ref=data["asset_ref"],
            credential=data["credential"],
            state=DeviceState(data.get("state", DeviceState.PROVISIONED.value)),
        )


@dataclass(frozen=True)
class LifecycleEvent:
    kind: str  # "asset" or "device"
    id: str
    source: str
    target: str


class AssetRegistry:
    """Six-level asset forest with device identities attached to its nodes.

    Mutations are serialized by a lock. ``snapshot()`` hands out an
    immutable copy so policy evaluation never observes a half-applied
    relocation.
    """

    def __init__(self):
        self._nodes: dict[str, AssetNode] = {}
        self._children: dict[str, set[str]] = {}
        self._devices: dict[str, DeviceIdentity] = {}
        self._lock = threading.RLock()
        self.events: list[LifecycleEvent] = []
        self._listeners: list[Callable[[LifecycleEvent], None]] = []

    # -- hierarchy ---------------------------------------------------------
    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def get(self, node_id: str) -> AssetNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def nodes(self, level: Level | None = None) -> list[AssetNode]:
        return [n for n in self._nodes.values() if level is None or n.level == level]

    def children(self, node_id: str) -> list[str]:
        return sorted(self._children.get(node_id, ()))

    def subscribe(self, listener: Callable[[LifecycleEvent], None]) -> None:
        self._listeners.append(listener)

    def _emit(self, event: LifecycleEvent) -> None:
        self.events.append(event)
        for listener in self._listeners:
            listener(event)

    def _check_parent(self, level: Level, parent: str | None) -> None:
        if level == Level.ENTERPRISE:
            if parent is not None:
                raise LevelMismatch("Enterprise nodes cannot have a parent")
            return
        if parent is None:
            raise LevelMismatch(f"{level.value} node requires a {_LEVEL_ORDER[level.depth - 1].value} parent")
        if parent not in self._nodes:
            raise UnknownParent(parent)
        parent_level = self._nodes[parent].level
        if parent_level.depth != level.depth - 1:
            raise LevelMismatch(
                f"{level.value} cannot sit under {parent_level.value}"
            )

    def register_node(self, node: AssetNode) -> str:
        with self._lock:
            if node.id in self._nodes:
                raise DuplicateId(node.id)
            self._check_parent(node.level, node.parent)
            stored = copy.deepcopy(node)
            self._nodes[node.id] = stored
            self._children.setdefault(node.id, set())
            if node.parent is not None:
                self._children[node.parent].add(node.id)
            self._assert_forest(node.id)
            return node.id

    def lineage(self, node_id: str) -> list[str]:
        """Ids from the root down to ``node_id`` inclusive."""
        path = []
        current: str | None = self.get(node_id).id
        while current is not None:
            path.append(current)
            current = self._nodes[current].parent
            if len(path) > len(_LEVEL_ORDER):
                raise CycleDetected(node_id)
        return path[::-1]

    def descendants(self, node_id: str) -> set[str]:
        out, stack = set(), [node_id]
        while stack:
            for child in self._children.get(stack.pop(), ()):
                if child not in out:
                    out.add(child)
                    stack.append(child)
        return out

    def relocate_node(self, node_id: str, new_parent: str) -> AssetNode:
        with self._lock:
            node = self.get(node_id)
            if node.level == Level.ENTERPRISE:
                raise LevelMismatch("Enterprise nodes cannot be relocated")
            if new_parent == node_id or new_parent in self.descendants(node_id):
                raise CycleDetected(f"{new_parent} is {node_id} or one of its descendants")
            self._check_parent(node.level, new_parent)
            self._children[node.parent].discard(node_id)
            node.parent = new_parent
            self._children[new_parent].add(node_id)
            self._assert_forest(node_id)
            return node

    def replace_component(self, component_id: str, **metadata: Any) -> AssetNode:
        """Swap the physical component in place; identity and sensor ids persist."""
        with self._lock:
            node = self.get(component_id)
            if node.level != Level.COMPONENT:
                raise LevelMismatch(f"{component_id} is not a Component")
            node.attributes.update(metadata)
            return node

    def transition_asset_lifecycle(self, node_id: str, target: Lifecycle | str) -> AssetNode:
        target = Lifecycle(target)
        with self._lock:
            node = self.get(node_id)
            if node.lifecycle == target:
                return node
            if target not in ASSET_TRANSITIONS[node.lifecycle]:
                raise IllegalTransition(f"{node.lifecycle.value} -> {target.value}")
            source = node.lifecycle
            node.lifecycle = target
        self._emit(LifecycleEvent("asset", node_id, source.value, target.value))
        return node

    def resolve_effective_attributes(self, node_id: str) -> dict[str, Any]:
        """Union of attributes root to leaf; the deeper level wins on collision.

        Besides the merged attributes the map carries ``lineage`` (root-first
        ids), ``lifecycle``, ``id``, ``level`` and, under each ancestor's
        level key (``site``, ``line`` ...), that ancestor's own effective map.
        """
        with self._lock:
            path = self.lineage(node_id)
            merged: dict[str, Any] = {}
            per_level: dict[str, dict[str, Any]] = {}
            for ancestor_id in path:
                ancestor = self._nodes[ancestor_id]
                merged.update(copy.deepcopy(ancestor.attributes))
                per_level[ancestor.level.key] = dict(merged, id=ancestor_id, lifecycle=ancestor.lifecycle.value)
            node = self._nodes[node_id]
            result = dict(merged)
            result.update(per_level)
            result["id"] = node_id
            result["level"] = node.level.value
            result["lineage"] = path
            result["lifecycle"] = node.lifecycle.value
            return result

    def _assert_forest(self, node_id: str) -> None:
        # Only the touched node and its direct children can break level ordering.
        for nid in (node_id, *self._children.get(node_id, ())):
            node = self._nodes[nid]
            if node.parent is None:
                assert node.level == Level.ENTERPRISE, nid
            else:
                assert self._nodes[node.parent].level.depth == node.level.depth - 1, nid

    # -- devices -----------------------------------------------------------
    def register_device(self, device: DeviceIdentity) -> str:
        with self._lock:
            if device.device_id in self._devices:
                raise DuplicateId(device.device_id)
            if device.asset_ref not in self._nodes:
                raise UnknownNode(device.asset_ref)
            self._devices[device.device_id] = copy.deepcopy(device)
            return device.device_id

    def device(self, device_id: str) -> DeviceIdentity:
        try:
            return self._devices[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    def devices(self) -> list[DeviceIdentity]:
        return list(self._devices.values())

    def transition_device(self, device_id: str, target: DeviceState | str) -> DeviceIdentity:
        target = DeviceState(target)
        with self._lock:
            dev = self.device(device_id)
            if dev.state == target:
                return dev
            if target not in DEVICE_TRANSITIONS[dev.state]:
                raise IllegalTransition(f"{dev.state.value} -> {target.value}")
            source = dev.state
            dev.state = target
        self._emit(LifecycleEvent("device", device_id, source.value, target.value))
        return dev

    def activate_device(self, device_id: str) -> DeviceIdentity:
        """Walk a device forward to Active from wherever it currently sits."""
        dev = self.device(device_id)
        if dev.state == DeviceState.PROVISIONED:
            self.transition_device(device_id, DeviceState.COMMISSIONED)
        if dev.state in (DeviceState.COMMISSIONED, DeviceState.SUSPENDED):
            self.transition_device(device_id, DeviceState.ACTIVE)
        return dev

    def revoke_device(self, device_id: str) -> DeviceIdentity:
        # Revocation is only reachable through Suspended.
        dev = self.device(device_id)
        if dev.state == DeviceState.ACTIVE:
            self.transition_device(device_id, DeviceState.SUSPENDED)
        if dev.state != DeviceState.REVOKED:
            if dev.state != DeviceState.SUSPENDED:
                raise IllegalTransition(f"{dev.state.value} -> Revoked")
            self.transition_device(device_id, DeviceState.REVOKED)
        return dev

    def rotate_credential(self, device_id: str, new_secret: str) -> DeviceIdentity:
        with self._lock:
            dev = self.device(device_id)
            dev.credential = credential_digest(device_id, new_secret)
            return dev

    def check_device_admission(self, device_id: str, presented_secret: str) -> bool:
        dev = self.device(device_id)
        if not hmac.compare_digest(dev.credential, credential_digest(device_id, presented_secret)):
            raise BadCredential(device_id)
        return dev.state == DeviceState.ACTIVE

    # -- persistence -------------------------------------------------------
    def snapshot(self) -> "RegistrySnapshot":
        with self._lock:
            return RegistrySnapshot(
                {nid: self.resolve_effective_attributes(nid) for nid in self._nodes}
            )

    def to_dict(self) -> dict:
        ordered = sorted(self._nodes.values(), key=lambda n: (n.level.depth, n.id))
        return {
            "nodes": [n.to_dict() for n in ordered],
            "devices": [d.to_dict() for d in sorted(self._devices.values(), key=lambda d: d.device_id)],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: Mapping) -> "AssetRegistry":
        reg = cls()
        nodes = [AssetNode.from_dict(n) for n in data.get("nodes", [])]
        for node in sorted(nodes, key=lambda n: n.level.depth):
            reg.register_node(node)
        for dev in data.get("devices", []):
            reg.register_device(DeviceIdentity.from_dict(dev))
        return reg

    @classmethod
    def load(cls, path) -> "AssetRegistry":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


class RegistrySnapshot:
    """Frozen view of every node's effective attribute map."""

    def __init__(self, resolved: dict[str, dict[str, Any]]):
        self._resolved = {k: MappingProxyType(v) for k, v in resolved.items()}

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._resolved

    def attributes(self, node_id: str) -> Mapping[str, Any]:
        try:
            return self._resolved[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def ids(self) -> Iterable[str]:
        return self._resolved.keys()
