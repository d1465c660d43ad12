# Tests for metalingo.settings
import pytest


def _namespace():
    from metalingo.settings import (
        CategorySetting,
        FlagSetting,
        ListSetting,
        NumberSetting,
        OptionalSetting,
        SettingsNamespace,
        Store,
        TextSetting,
    )

    class Child(SettingsNamespace):
        namespace = "parent.child"
        rate = NumberSetting(float, "rate", 0.5, [0.0, 1.0], {"inf": float("inf")})

        def label(self, attr):
            return {"rate": "A rate"}[attr]

    class Parent(SettingsNamespace):
        namespace = "parent"
        mode = CategorySetting("mode", "a", ["a", "b"])
        count = NumberSetting(int, "count", 3, [1, 10])
        name = TextSetting("name", "x")
        enabled = FlagSetting("enabled", False)
        sizes = ListSetting(NumberSetting(int, "sizes", 1, [1, 5]), "sizes", [1, 2], (1, 3))
        limit = OptionalSetting(NumberSetting(int, "limit", 1, [0, 9]))

        def __init__(self, store):
            super().__init__(store)
            self.child = Child(store)

        def label(self, attr):
            return attr.upper()

    return Parent(Store())


def test_store_get():
    from metalingo.settings import Store

    s = Store()

    cases = [
        ("ns1", "setting", "call1_defaultvalue1", "call2_defaultvalue1"),
        ("ns1.ns2", "setting", "call1_defaultvalue2", "call2_defaultvalue2"),
        ("ns1.ns2.ns3", "setting", "call1_defaultvalue3", "call2_defaultvalue3"),
    ]
    for i, case in enumerate(cases):
        # First call, setting does not exist, so default value becomes the value
        assert s.get(case[0], case[1], case[2]) == case[2]

        # Getter does not populate settings dict
        if i == 0:
            assert s.settings == {}

        # Second call, setting does exist, so default value is ignored
        s.set(case[0], case[1], case[2])
        assert s.get(case[0], case[1], case[3]) == case[2]


def test_store_root_namespace():
    from metalingo.settings import Store

    s = Store({"seed": 4})
    assert s.get("", "seed", 0) == 4
    s.set("", "seed", 5)
    assert s.settings == {"seed": 5}
    s.delete("", "seed")
    assert s.settings == {}


def test_store_delete_prunes_empty_namespaces():
    from metalingo.settings import Store

    s = Store()
    s.set("a.b", "x", 1)
    s.set("a", "y", 2)
    s.delete("a.b", "x")
    assert s.settings == {"a": {"y": 2}}
    s.delete("a", "y")
    assert s.settings == {}


def test_store_copies_its_document():
    from metalingo.settings import Store

    document = {"a": {"x": 1}}
    s = Store(document)
    s.set("a", "x", 2)
    assert document == {"a": {"x": 1}}


def test_defaults_are_not_stored():
    ns = _namespace()

    assert ns.count == 3
    ns.count = 4
    assert ns.store.settings == {"parent": {"count": 4}}
    ns.count = 3
    assert ns.store.settings == {}


def test_setting_validation():
    from metalingo.settings import ConfigError

    ns = _namespace()
    cases = [
        ("mode", "c"),
        ("mode", 1),
        ("count", 0),
        ("count", 11),
        ("count", 2.5),
        ("count", True),
        ("count", "3"),
        ("name", ""),
        ("name", 3),
        ("enabled", 1),
        ("enabled", "true"),
        ("sizes", []),
        ("sizes", [1, 2, 3, 4]),
        ("sizes", [1, 6]),
        ("sizes", 1),
        ("limit", -1),
    ]
    for attr, value in cases:
        with pytest.raises(ConfigError):
            setattr(ns, attr, value)

    ns.count = 5.0
    assert ns.count == 5 and isinstance(ns.count, int)
    ns.enabled = True
    assert ns.enabled is True
    ns.sizes = [5]
    assert ns.sizes == [5]
    assert ns.limit is None
    ns.limit = 7
    assert ns.limit == 7


def test_number_sentinels():
    import math

    ns = _namespace()
    assert ns.child.rate == 0.5
    ns.child.rate = "inf"
    assert math.isinf(ns.child.rate)
    assert ns.store.settings == {"parent": {"child": {"rate": "inf"}}}
    assert ns.resolved()["child"]["rate"] == "inf"


def test_load_rejects_unknown_keys():
    from metalingo.settings import ConfigError

    cases = [
        ({"colour": 1}, "parent.colour"),
        ({"child": {"speed": 1}}, "parent.child.speed"),
    ]
    for document, path in cases:
        ns = _namespace()
        with pytest.raises(ConfigError, match=path):
            ns.load(document)
    with pytest.raises(ConfigError):
        _namespace().load([1, 2])


def test_load_and_resolved():
    ns = _namespace()
    ns.load({"count": 6, "child": {"rate": 0.25}})
    assert ns.resolved() == {
        "mode": "a",
        "count": 6,
        "name": "x",
        "enabled": False,
        "sizes": [1, 2],
        "limit": None,
        "child": {"rate": 0.25},
    }


def test_setting_and_namespace_lists():
    ns = _namespace()
    assert [s.attr for s in ns.setting_list()] == [
        "count",
        "enabled",
        "limit",
        "mode",
        "name",
        "sizes",
    ]
    assert [n.key for n in ns.namespace_list()] == ["child"]


def test_schema_fragment():
    ns = _namespace()
    schema = ns.schema()
    assert schema["additionalProperties"] is False
    properties = schema["properties"]
    assert properties["mode"]["enum"] == ["a", "b"]
    assert properties["count"]["minimum"] == 1
    assert properties["count"]["maximum"] == 10
    assert properties["count"]["description"] == "COUNT"
    assert properties["sizes"]["maxItems"] == 3
    assert properties["limit"]["anyOf"][1] == {"type": "null"}
    assert properties["child"]["properties"]["rate"]["anyOf"][1] == {"enum": ["inf"]}
