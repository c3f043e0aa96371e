import pytest

from ndpfs.items import BOOL, F64, ItemSchema, utf8


@pytest.fixture
def weather_schema() -> ItemSchema:
    return ItemSchema([("city", utf8(16)), ("temp", F64), ("alert", BOOL)])


@pytest.fixture
def weather_items() -> list[tuple]:
    return [
        ("SF", 12.0, False),
        ("LA", 22.5, False),
        ("NY", -3.0, False),
        ("SF", 30.5, False),
        ("LA", 18.0, False),
        ("NY", 5.5, False),
    ]
