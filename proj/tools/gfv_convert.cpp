#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "geoflow/io.hpp"

namespace gf = geoflow;

// Converts a headered numeric CSV of embeddings to the binary format. Each
// row is one record; --paired splits the columns evenly into an image half
// and a text half. Rows are normalized before writing.
int main(int argc, char** argv) {
  CLI::App app{"CSV to embedding-file converter"};
  std::string csv_path, out_path;
  bool paired = false;
  app.add_option("--csv", csv_path, "input csv with a header row")->required();
  app.add_option("--out", out_path, "output .gfv path")->required();
  app.add_flag("--paired", paired, "columns hold image then text halves");

  try {
    app.parse(argc, argv);
    const gf::CsvData csv = gf::read_csv(csv_path);
    const std::size_t width = csv.header.size();
    if (paired && width % 2 != 0)
      throw gf::DataError("--paired needs an even column count, got " +
                          std::to_string(width));
    const std::size_t d = paired ? width / 2 : width;
    if (d < 2) throw gf::DataError("embedding dim must be at least 2");

    gf::MatrixXd img(d, csv.rows.size()), txt;
    if (paired) txt.resize(d, csv.rows.size());
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        double v;
        try {
          v = std::stod(csv.rows[r][c]);
        } catch (const std::exception&) {
          throw gf::DataError("non-numeric cell \"" + csv.rows[r][c] +
                              "\" at row " + std::to_string(r));
        }
        if (c < d)
          img(c, r) = v;
        else
          txt(c - d, r) = v;
      }
      const double ni = img.col(r).norm();
      if (ni < 1e-12)
        throw gf::DataError("zero-norm row " + std::to_string(r));
      img.col(r) /= ni;
      if (paired) {
        const double nt = txt.col(r).norm();
        if (nt < 1e-12)
          throw gf::DataError("zero-norm text row " + std::to_string(r));
        txt.col(r) /= nt;
      }
    }
    gf::write_embeddings(out_path, img, paired ? &txt : nullptr);
    std::printf("wrote %zu records of dim %zu to %s\n", csv.rows.size(), d,
                out_path.c_str());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const gf::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const gf::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  }
  return 0;
}
