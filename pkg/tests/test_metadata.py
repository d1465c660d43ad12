def test_vars_exist():
    from metalingo import metadata

    assert getattr(metadata, "VERSION")
