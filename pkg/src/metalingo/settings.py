# The MIT License (MIT)

# Copyright (c) 2024 metalingo contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in
# all copies or substantial portions of the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN
# THE SOFTWARE.
"""Typed settings descriptors over a JSON document store.

A :class:`SettingsNamespace` subclass declares its settings as class-level
descriptors and its child namespaces as instance attributes. Reads go
through the namespace's :class:`Store`; values equal to their default are
never stored, so the store only ever holds what a user actually changed.
"""
import json
import math

SCHEMA_DIALECT = "https://json-schema.org/draft/2020-12/schema"


class ConfigError(ValueError):
    """Raised for unknown keys and invalid setting values"""


def _dotted(namespace, attr):
    return "%s.%s" % (namespace, attr) if namespace else attr


class SettingsNamespace:
    """Represents a settings namespace containing settings and child namespaces"""

    namespace = ""

    def __init__(self, store):
        self.store = store

    @property
    def key(self):
        """The namespace's own key inside its parent"""
        return self.namespace.rsplit(".", 1)[-1]

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        raise NotImplementedError()

    def namespace_list(self):
        """Returns the list of child SettingsNamespace objects"""
        namespaces = [
            ns for ns in self.__dict__.values() if isinstance(ns, SettingsNamespace)
        ]
        namespaces.sort(key=lambda ns: str(ns.__class__.__name__))
        return namespaces

    def setting_list(self):
        """Returns the list of child Setting objects"""
        settings = [
            getattr(self.__class__, setting)
            for setting in dir(self.__class__)
            if isinstance(getattr(self.__class__, setting), Setting)
        ]
        settings.sort(key=lambda s: s.attr)
        return settings

    def load(self, document):
        """Validates a JSON object against this namespace and stores its values"""
        if not isinstance(document, dict):
            raise ConfigError(
                "%s must be an object" % (self.namespace or "configuration")
            )
        settings = {s.attr: s for s in self.setting_list()}
        children = {ns.key: ns for ns in self.namespace_list()}
        for key, value in document.items():
            if key in settings:
                setattr(self, key, value)
            elif key in children:
                children[key].load(value)
            else:
                raise ConfigError("unknown key: %s" % _dotted(self.namespace, key))

    def resolved(self):
        """Full tree of this namespace with defaults filled in"""
        tree = {s.attr: s.dump(getattr(self, s.attr)) for s in self.setting_list()}
        for ns in self.namespace_list():
            tree[ns.key] = ns.resolved()
        return tree

    def schema(self):
        """JSON-Schema fragment describing this namespace"""
        properties = {}
        for s in self.setting_list():
            properties[s.attr] = dict(s.schema(), description=self.label(s.attr))
        for ns in self.namespace_list():
            properties[ns.key] = dict(ns.schema(), description=self.label(ns.key))
        return {
            "type": "object",
            "properties": properties,
            "additionalProperties": False,
        }


class Setting:
    """Implements the descriptor protocol for reading and writing a single setting"""

    def __init__(self, attr, default_value):
        self.attr = attr
        self.default_value = default_value

    def __get__(self, obj, objtype=None):
        if obj is None:
            return self
        return self.coerce(obj.store.get(obj.namespace, self.attr, self.default_value))

    def __set__(self, obj, value):
        value = self.validate(value, _dotted(obj.namespace, self.attr))
        if value == self.default_value:
            obj.store.delete(obj.namespace, self.attr)  # do not store defaults
        else:
            obj.store.set(obj.namespace, self.attr, value)  # do store custom settings

    def validate(self, value, path):
        """Returns the JSON form of a valid value or raises ConfigError"""
        if not isinstance(value, (str, bool, int, float)):
            raise ConfigError("%s must be a scalar" % path)
        return value

    def coerce(self, value):
        """Maps the stored JSON form to the Python value handed to callers"""
        return value

    def dump(self, value):
        """Maps a Python value back to its JSON form"""
        return value

    def schema(self):
        """JSON-Schema fragment for the setting"""
        return {"default": self.dump(self.default_value)}


class CategorySetting(Setting):
    """Setting that can be one of N categories"""

    def __init__(self, attr, default_value, categories):
        super().__init__(attr, default_value)
        self.categories = categories

    def validate(self, value, path):
        # bool is an int subclass, so compare types as well as values
        for category in self.categories:
            if value == category and type(value) is type(category):
                return value
        raise ConfigError(
            "%s must be one of %s, got %r" % (path, list(self.categories), value)
        )

    def schema(self):
        return {"enum": list(self.categories), "default": self.default_value}


class NumberSetting(Setting):
    """Setting that can be a number within a defined (inclusive) range.

    ``sentinels`` maps accepted strings to the values callers receive, e.g.
    {"inf": math.inf} or {"auto": "auto"}.
    """

    def __init__(self, numtype, attr, default_value, value_range, sentinels=None):
        super().__init__(attr, default_value)
        self.numtype = numtype
        self.value_range = value_range
        self.sentinels = sentinels or {}

    def validate(self, value, path):
        if isinstance(value, str) and value in self.sentinels:
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("%s must be a number, got %r" % (path, value))
        if self.numtype is int:
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError("%s must be an integer, got %r" % (path, value))
            value = int(value)
        else:
            value = float(value)
        if not math.isfinite(value):
            raise ConfigError("%s must be finite" % path)
        low, high = self.value_range
        if not low <= value <= high:
            raise ConfigError(
                "%s must lie in [%s, %s], got %r" % (path, low, high, value)
            )
        return value

    def coerce(self, value):
        if isinstance(value, str):
            return self.sentinels[value]
        return value

    def dump(self, value):
        for name, sentinel in self.sentinels.items():
            if value == sentinel and type(value) is type(sentinel):
                return name
        return value

    def schema(self):
        low, high = self.value_range
        number = {"type": "integer" if self.numtype is int else "number"}
        if math.isfinite(low):
            number["minimum"] = low
        if math.isfinite(high):
            number["maximum"] = high
        fragment = {"default": self.dump(self.default_value)}
        if self.sentinels:
            fragment["anyOf"] = [number, {"enum": list(self.sentinels)}]
        else:
            fragment.update(number)
        return fragment


class TextSetting(Setting):
    """Free-form string setting"""

    def validate(self, value, path):
        if not isinstance(value, str) or not value:
            raise ConfigError("%s must be a non-empty string" % path)
        return value

    def schema(self):
        return {"type": "string", "minLength": 1, "default": self.default_value}


class FlagSetting(CategorySetting):
    """Boolean setting"""

    def __init__(self, attr, default_value):
        super().__init__(attr, default_value, [False, True])

    def schema(self):
        return {"type": "boolean", "default": self.default_value}


class ListSetting(Setting):
    """Setting holding a list of items validated by an item setting"""

    def __init__(self, item, attr, default_value, length_range=(0, math.inf)):
        super().__init__(attr, list(default_value))
        self.item = item
        self.length_range = length_range

    def validate(self, value, path):
        if not isinstance(value, list):
            raise ConfigError("%s must be a list" % path)
        low, high = self.length_range
        if not low <= len(value) <= high:
            raise ConfigError(
                "%s must hold between %s and %s items" % (path, low, high)
            )
        return [
            self.item.validate(v, "%s[%d]" % (path, i)) for i, v in enumerate(value)
        ]

    def coerce(self, value):
        return [self.item.coerce(v) for v in value]

    def dump(self, value):
        return [self.item.dump(v) for v in value]

    def schema(self):
        fragment = {
            "type": "array",
            "items": self.item.schema(),
            "minItems": self.length_range[0],
            "default": self.dump(self.default_value),
        }
        fragment["items"].pop("default", None)
        if math.isfinite(self.length_range[1]):
            fragment["maxItems"] = self.length_range[1]
        return fragment


class OptionalSetting(Setting):
    """Wraps another setting so that null is accepted; the default is null"""

    def __init__(self, inner):
        super().__init__(inner.attr, None)
        self.inner = inner

    def validate(self, value, path):
        if value is None:
            return None
        return self.inner.validate(value, path)

    def coerce(self, value):
        return None if value is None else self.inner.coerce(value)

    def dump(self, value):
        return None if value is None else self.inner.dump(value)

    def schema(self):
        inner = self.inner.schema()
        inner.pop("default", None)
        return {"anyOf": [inner, {"type": "null"}], "default": None}


class Store:
    """Acts as a simple in-memory JSON document store for settings"""

    def __init__(self, settings=None):
        # deepcopy through JSON, the document must be JSON-serializable anyway
        self.settings = json.loads(json.dumps(settings or {}))

    @staticmethod
    def _levels(namespace):
        return [level for level in namespace.split(".") if level]

    def get(self, namespace, setting_name, default_value):
        """Returns a setting value under the given namespace, or default value if not set"""
        s = self.settings
        for level in self._levels(namespace):
            s = s.get(level, {})
        if setting_name not in s:
            return default_value
        return s[setting_name]

    def set(self, namespace, setting_name, setting_value):
        """Stores a setting value under the given namespace"""
        s = self.settings
        for level in self._levels(namespace):
            s[level] = s.get(level, {})
            s = s[level]
        s[setting_name] = setting_value

    def delete(self, namespace, setting_name):
        """Deletes dict storage in self.settings for namespace.setting_name,
        also deletes storage for setting_name's parent namespace nodes, if empty.
        """
        s = self.settings
        levels = []
        for level in self._levels(namespace):
            s[level] = s.get(level, {})
            levels.append([s, level])
            s = s[level]
        if setting_name in s:
            del s[setting_name]
        for s, level in reversed(levels):
            if not s[level]:
                del s[level]

    def dumps(self):
        """Serializes the stored (non-default) values"""
        return json.dumps(self.settings, sort_keys=True, indent=2)
