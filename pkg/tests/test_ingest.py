"""Tests for ingest module."""

import pytest

from childrec.dataset import CHILDREN_GENRE, ItemMeta, Source
from childrec.exceptions import IngestionError
from childrec.ingest import (
    load_ml1m,
    load_ml1m_movies,
    read_interchange,
    split_title_year,
    write_histogram,
    write_interchange,
)

from conftest import make_dataset

MOVIES = (
    "1::Toy Story (1995)::Animation|Children's|Comedy\n"
    "2::Jumanji (1995)::Adventure|Children's|Fantasy\n"
    "3::Lion King, The (1994)::Animation|Children's|Musical\n"
    "4::Heat (1995)::Action|Crime|Thriller\n"
)


def _write_ml1m(tmp_path, ratings, movies=MOVIES):
    ratings_path = tmp_path / "ratings.dat"
    movies_path = tmp_path / "movies.dat"
    ratings_path.write_text(ratings, encoding="latin-1")
    movies_path.write_text(movies, encoding="latin-1")
    return ratings_path, movies_path


class TestSplitTitleYear:
    def test_with_year(self):
        assert split_title_year("Toy Story (1995)") == ("Toy Story", 1995)

    def test_without_year(self):
        assert split_title_year("Untitled") == ("Untitled", None)

    def test_inner_parentheses_kept(self):
        assert split_title_year("City of Lost Children, The (Cité des) (1995)") == (
            "City of Lost Children, The (Cité des)", 1995
        )


class TestLoadMl1m:
    def test_parses_fixture(self, tmp_path):
        ratings, movies = _write_ml1m(
            tmp_path,
            "1::1::5::978300760\n1::4::3::978302109\n2::1::4::978301968\n",
        )
        ds = load_ml1m(ratings, movies)
        assert ds.stats == (2, 2, 3)
        assert ds.users == ("ml1m:1", "ml1m:2")
        assert ds.item_meta("ml1m:1").title == "Toy Story"
        assert ds.item_meta("ml1m:1").is_children
        assert not ds.item_meta("ml1m:4").is_children
        assert {r.source for r in ds.ratings()} == {Source.ADULT}

    def test_empty_ratings_file(self, tmp_path):
        ratings, movies = _write_ml1m(tmp_path, "")
        assert load_ml1m(ratings, movies).stats == (0, 0, 0)

    def test_duplicate_names_line(self, tmp_path):
        ratings, movies = _write_ml1m(
            tmp_path,
            "1::1::5::978300760\n1::2::3::978302109\n1::1::4::978301968\n",
        )
        with pytest.raises(IngestionError) as excinfo:
            load_ml1m(ratings, movies)
        assert excinfo.value.line_no == 3
        assert "duplicate" in str(excinfo.value)

    def test_out_of_range_value(self, tmp_path):
        ratings, movies = _write_ml1m(tmp_path, "1::1::5::1\n1::2::7::1\n")
        with pytest.raises(IngestionError) as excinfo:
            load_ml1m(ratings, movies)
        assert excinfo.value.line_no == 2

    @pytest.mark.parametrize("line", ["1::1::5\n", "1::x::5::1\n", "1;1;5;1\n"])
    def test_malformed_line(self, tmp_path, line):
        ratings, movies = _write_ml1m(tmp_path, "1::2::3::4\n" + line)
        with pytest.raises(IngestionError, match="Line 2"):
            load_ml1m(ratings, movies)

    def test_namespace(self, tmp_path):
        ratings, movies = _write_ml1m(tmp_path, "1::1::5::1\n")
        ds = load_ml1m(ratings, movies, namespace="adult", source=Source.SYNTH)
        assert ds.items == ("adult:1",)


class TestLoadMovies:
    def test_genres_and_article_title(self, tmp_path):
        _, movies = _write_ml1m(tmp_path, "")
        meta = load_ml1m_movies(movies)
        assert meta["ml1m:3"].title == "Lion King, The"
        assert meta["ml1m:3"].year == 1994
        assert CHILDREN_GENRE in meta["ml1m:2"].genres

    def test_malformed(self, tmp_path):
        _, movies = _write_ml1m(tmp_path, "", movies="1::Toy Story (1995)\n")
        with pytest.raises(IngestionError):
            load_ml1m_movies(movies)


class TestInterchange:
    def test_round_trip_with_items(self, tmp_path):
        ds = make_dataset(
            [("child:1", "child:1", 5), ("child:2", "child:1", 4), ("child:2", "child:2", 2.5)],
            source=Source.CHILD,
            meta=[
                ItemMeta("child:1", "Heidi, with comma", 1937, frozenset({CHILDREN_GENRE, "Drama"})),
                ItemMeta("child:2", "No Year"),
            ],
        )
        write_interchange(ds, tmp_path / "d.csv", tmp_path / "d.items.csv")
        back = read_interchange(tmp_path / "d.csv", tmp_path / "d.items.csv")
        assert back.stats == ds.stats
        assert sorted(back.ratings(), key=lambda r: (r.user, r.item)) == sorted(
            ds.ratings(), key=lambda r: (r.user, r.item)
        )
        assert back.item_meta("child:1") == ds.item_meta("child:1")
        assert back.item_meta("child:2").year is None

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("u,i,v,s\na,b,3,adult\n", encoding="utf-8")
        with pytest.raises(IngestionError, match="Line 1"):
            read_interchange(path)

    def test_unknown_source(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("user,item,value,source\na,b,3,adult\na,c,3,teen\n", encoding="utf-8")
        with pytest.raises(IngestionError, match="Line 3"):
            read_interchange(path)

    def test_non_numeric_value(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("user,item,value,source\na,b,three,adult\n", encoding="utf-8")
        with pytest.raises(IngestionError, match="Line 2"):
            read_interchange(path)

    def test_blank_lines_keep_line_numbers(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("user,item,value,source\na,b,3,adult\n\n\na,c,3,teen\n", encoding="utf-8")
        with pytest.raises(IngestionError, match="Line 5"):
            read_interchange(path)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("user,item,value,source\na,b,3,adult\n\na,c,4,child\n", encoding="utf-8")
        ds = read_interchange(path)
        assert ds.stats == (1, 2, 2)

    def test_items_blank_line_numbers(self, tmp_path):
        ratings = tmp_path / "d.csv"
        ratings.write_text("user,item,value,source\na,b,3,adult\n", encoding="utf-8")
        items = tmp_path / "d.items.csv"
        items.write_text("item,title,year,genres\n\nb,Heidi,19x7,Drama\n", encoding="utf-8")
        with pytest.raises(IngestionError, match="Line 3"):
            read_interchange(ratings, items)

    def test_histogram_file(self, tmp_path):
        path = tmp_path / "hist.csv"
        write_histogram({3: 2, 1: 1}, path)
        assert path.read_text(encoding="utf-8") == "ratings_per_user,user_count\n1,1\n3,2\n"
