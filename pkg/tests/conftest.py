import pytest

from ldpsched.conflict_graph import eight_link_example


@pytest.fixture
def ex8():
    return eight_link_example()
