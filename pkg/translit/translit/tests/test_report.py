import csv
import os

import pytest

from ..finetune import EpochRecord, TrainRunRecord
from ..report import *

TABLE_ONE = """{"kind": "bleu_comparison",
 "title": "4-gram BLEU, Roman-Urdu to Urdu",
 "rows": [["Roman-Urdu-Parl (RNN+LSTM)", 84.67],
          ["GPT-4o Mini (zero-shot)", 80.966],
          {"Method": "Our Work", "BLEU Score": 94.586}]}
"""


@pytest.fixture
def table_one(tmp_path):
    path = tmp_path / "table1.json"
    path.write_text(TABLE_ONE, encoding="utf-8")
    return load_table(str(path))


def scores(bleu, char_bleu, chrf):
    return {"bleu": bleu, "char_bleu": char_bleu, "chrf": chrf, "sentences": 10}


class TestTables:
    def test_values_printed_exactly(self, table_one):
        text = render_markdown(table_one)
        assert text.splitlines() == [
            "**4-gram BLEU, Roman-Urdu to Urdu**",
            "",
            "| Method | BLEU Score |",
            "| --- | --- |",
            "| Roman-Urdu-Parl (RNN+LSTM) | 84.67 |",
            "| GPT-4o Mini (zero-shot) | 80.966 |",
            "| Our Work | 94.586 |",
        ]

    def test_trailing_zeros_kept(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text('{"kind": "bleu_comparison", "rows": [["a", 76.50], ["b", 90]]}', encoding="utf-8")
        assert validate_table(load_table(str(path))) == [["a", "76.50"], ["b", "90"]]

    def test_render_files(self, table_one, tmp_path):
        md, csv_path = render_table(table_one, str(tmp_path / "out"), stem="table1")
        assert os.path.basename(md) == "table1.md"
        with open(csv_path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["Method", "BLEU Score"]
        assert [row[1] for row in rows[1:]] == ["84.67", "80.966", "94.586"]

    def test_char_bleu_layout(self):
        doc = {"kind": "char_bleu", "title": "",
               "rows": [["m2m100", "Roman-Urdu-Parl", "Dakshina", "96.37", None]]}
        header, separator, row = render_markdown(doc).splitlines()
        assert header == "| Model Variant | Trained on | Tested on | Without MLM | With MLM |"
        assert row == "| m2m100 | Roman-Urdu-Parl | Dakshina | 96.37 | – |"

    def test_float_cells(self):
        assert validate_table({"kind": "bleu_comparison", "rows": [["x", 97.44]]}) == [["x", "97.44"]]

    def test_bad_documents(self, tmp_path):
        with pytest.raises(ReportError) as e:
            validate_table({"kind": "table9", "rows": []})
        assert "Table kind must be one of" in e.exconly()
        with pytest.raises(ReportError) as e:
            validate_table({"kind": "bleu_comparison", "rows": [["only one cell"]]})
        assert "Row 1 has 1 cells but a bleu_comparison table has 2 columns." in e.exconly()
        with pytest.raises(ReportError):
            validate_table({"kind": "bleu_comparison", "rows": [{"Method": "x"}]})
        path = tmp_path / "broken.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ReportError):
            load_table(str(path))


class TestAppendix:
    @pytest.fixture
    def record(self):
        epochs = [EpochRecord(e, 0.1, {"rup": scores(90 - e, 96, 95), "dakshina": scores(50 + e, 80, 78)})
                  for e in range(1, 6)]
        return TrainRunRecord("phase2", epochs, {"rup": scores(94.586, 97.296, 96.73),
                                                 "dakshina": scores(53.089, 81.916, 77.48)}, (2, 5))

    def test_rows(self, record):
        llm = {"rup": scores(80.966, 92.029, 89.58), "dakshina": scores(57.535, 75.254, 76.5)}
        rows = appendix_rows("Without MLM", "roman2ur", record, llm, "rup", "dakshina")
        assert [row[2] for row in rows] == ["Without further fine-tuning", "2nd", "5th"]
        assert all(len(row) == len(TABLE_COLUMNS["appendix"]) for row in rows)
        assert rows[0][3:9] == ["80.966", "57.535", "92.029", "75.254", "89.580", "76.500"]
        assert rows[0][9:] == ["94.586", "53.089", "97.296", "81.916", "96.730", "77.480"]
        assert rows[2][9:11] == ["85.000", "55.000"]
        render_markdown({"kind": "appendix", "rows": rows})

    def test_dict_record(self, record):
        llm = {"rup": scores(1, 2, 3), "dakshina": scores(4, 5, 6)}
        assert appendix_rows("c", "m", record.to_dict(), llm, "rup", "dakshina") == \
            appendix_rows("c", "m", record, llm, "rup", "dakshina")

    def test_missing_set(self, record):
        with pytest.raises(ReportError) as e:
            appendix_rows("c", "m", record, {"rup": scores(1, 2, 3)}, "rup", "dakshina")
        assert "dakshina" in e.exconly()

    def test_epoch_beyond_run(self, record):
        record.reported_epochs = (7,)
        with pytest.raises(ReportError) as e:
            appendix_rows("c", "m", record, {"rup": scores(1, 2, 3), "dakshina": scores(1, 2, 3)},
                          "rup", "dakshina")
        assert "Phase 2 ran 5 epochs; epoch 7 cannot be reported." in e.exconly()


class TestLossCurves:
    def test_plot(self, tmp_path):
        path = tmp_path / "mlm_loss.csv"
        path.write_text("epoch,split,loss\n0,train,3.2\n1,train,2.1\n2,train,1.4\n", encoding="utf-8")
        curves = read_loss_csv(str(path))
        assert curves == {"train": ([0, 1, 2], [3.2, 2.1, 1.4])}
        out = plot_loss_curves(str(path), str(tmp_path / "loss.png"), title="MLM")
        with open(out, "rb") as f:
            assert f.read(8) == b"\x89PNG\r\n\x1a\n"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("epoch,split,loss\n", encoding="utf-8")
        with pytest.raises(ReportError):
            read_loss_csv(str(path))


DATA = os.path.join(os.path.dirname(__file__), "data")


class TestPublishedTables:
    @pytest.mark.parametrize("name, rows", [("table1", 3), ("char_bleu_roman2ur", 6), ("char_bleu_ur2roman", 6),
                                            ("appendix", 18)])
    def test_renders(self, name, rows, tmp_path):
        doc = load_table(os.path.join(DATA, name + ".json"))
        md, _ = render_table(doc, str(tmp_path), stem=name)
        with open(md, encoding="utf-8") as f:
            lines = f.read().splitlines()
        assert len(lines) == 2 + 2 + rows

    def test_published_values_verbatim(self):
        table = validate_table(load_table(os.path.join(DATA, "table1.json")))
        assert [row[1] for row in table] == ["84.67", "80.966", "94.586"]
        ur2roman = validate_table(load_table(os.path.join(DATA, "char_bleu_ur2roman.json")))
        assert ur2roman[2] == ["GPT-4o Mini", "–", "RUP", "67.90", "67.90"]
        appendix = validate_table(load_table(os.path.join(DATA, "appendix.json")))
        assert appendix[0][3:9] == ["57.535", "75.254", "80.966", "92.029", "76.50", "89.58"]
        assert appendix[-1][2] == "5th"
        assert appendix[-1][-1] == "71.83"
