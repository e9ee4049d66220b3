"""Backbone/action-head registries. Components register by id; composition
looks ids up and never needs to know concrete classes."""

from __future__ import annotations

from ..errors import RegistryError

BACKBONES: dict[str, type] = {}
HEADS: dict[str, type] = {}


def register_backbone(name: str):
    def wrap(cls):
        BACKBONES[name] = cls
        return cls

    return wrap


def register_head(name: str):
    def wrap(cls):
        HEADS[name] = cls
        return cls

    return wrap


def lookup_backbone(name: str) -> type:
    if name not in BACKBONES:
        raise RegistryError(
            f"unknown backbone {name!r}; available: {sorted(BACKBONES)}"
        )
    return BACKBONES[name]


def lookup_head(name: str) -> type:
    if name not in HEADS:
        raise RegistryError(f"unknown head {name!r}; available: {sorted(HEADS)}")
    return HEADS[name]
