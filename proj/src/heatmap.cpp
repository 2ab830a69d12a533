#include "nuta/heatmap.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "nuta/error.hpp"
#include "nuta/train.hpp"  // format_double

namespace nuta {

HeatmapExport export_heatmap(const ProjectionMap& m, int64_t batch_index,
                             const std::string& prefix) {
  require<ValueError>(batch_index >= 0 && batch_index < m.batch(),
                      "export_heatmap: batch index ", batch_index,
                      " outside [0, ", m.batch(), ")");
  const int64_t heads = m.heads();
  const int64_t targets = m.target_steps();
  const int64_t sources = m.source_steps();
  auto vals = m.values.data();
  const int64_t per_entry = heads * targets * sources;
  const double* base = vals.data() + batch_index * per_entry;

  double lo = base[0];
  double hi = base[0];
  for (int64_t i = 1; i < per_entry; ++i) {
    lo = std::min(lo, base[i]);
    hi = std::max(hi, base[i]);
  }

  HeatmapExport out;
  out.min_value = lo;
  out.max_value = hi;
  const double span = hi - lo;

  for (int64_t h = 0; h < heads; ++h) {
    const double* head = base + h * targets * sources;

    std::string txt_path = prefix + "_head" + std::to_string(h) + ".txt";
    {
      std::ofstream f(txt_path, std::ios::binary);
      require<IoError>(f.good(), "export_heatmap: cannot open ", txt_path);
      f << "# rows " << targets << " cols " << sources << " min "
        << format_double(lo) << " max " << format_double(hi) << "\n";
      for (int64_t t = 0; t < targets; ++t) {
        for (int64_t s = 0; s < sources; ++s) {
          if (s) f << ' ';
          f << format_double(head[t * sources + s]);
        }
        f << '\n';
      }
      require<IoError>(f.good(), "export_heatmap: write failed on ", txt_path);
    }
    out.text_paths.push_back(txt_path);

    std::string pgm_path = prefix + "_head" + std::to_string(h) + ".pgm";
    {
      std::ofstream f(pgm_path, std::ios::binary);
      require<IoError>(f.good(), "export_heatmap: cannot open ", pgm_path);
      f << "P5\n" << sources << " " << targets << "\n255\n";
      std::vector<unsigned char> row(static_cast<size_t>(sources));
      for (int64_t t = 0; t < targets; ++t) {
        for (int64_t s = 0; s < sources; ++s) {
          double v = head[t * sources + s];
          double g = span > 0.0 ? 255.0 * (v - lo) / span : 128.0;
          row[static_cast<size_t>(s)] =
              static_cast<unsigned char>(std::lround(std::clamp(g, 0.0, 255.0)));
        }
        f.write(reinterpret_cast<const char*>(row.data()),
                static_cast<std::streamsize>(row.size()));
      }
      require<IoError>(f.good(), "export_heatmap: write failed on ", pgm_path);
    }
    out.image_paths.push_back(pgm_path);
  }
  return out;
}

std::vector<std::vector<double>> read_heatmap_text(const std::string& path) {
  std::ifstream f(path);
  require<IoError>(f.good(), "read_heatmap_text: cannot open ", path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      require<IoError>(ec == std::errc() && p == tok.data() + tok.size(),
                       "read_heatmap_text: bad number '", tok, "' in ", path);
      row.push_back(v);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace nuta
