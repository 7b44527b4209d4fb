#include "mrg/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mrg/errors.hpp"

namespace mrg {

namespace {

// ---- PNG plumbing: stored-block zlib stream, CRC32, Adler32 ----

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0) {
  static std::uint32_t table[256];
  static bool ready = false;
  if (!ready) {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    ready = true;
  }
  crc ^= 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

std::uint32_t adler32(const std::vector<std::uint8_t>& data) {
  std::uint32_t a = 1, b = 0;
  for (std::uint8_t byte : data) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

void write_chunk(std::ofstream& out, const char type[4], const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> head;
  put_u32(head, std::uint32_t(data.size()));
  out.write(reinterpret_cast<const char*>(head.data()), 4);
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.write(reinterpret_cast<const char*>(body.data()), std::streamsize(body.size()));
  std::vector<std::uint8_t> tail;
  put_u32(tail, crc32(body.data(), body.size()));
  out.write(reinterpret_cast<const char*>(tail.data()), 4);
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(std::size_t(w) * h * 3, 255) {}

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    const std::size_t at = (std::size_t(y) * w_ + x) * 3;
    px_[at] = r;
    px_[at + 1] = g;
    px_[at + 2] = b;
  }

  void line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void marker(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx)
        if (std::abs(dx) + std::abs(dy) <= 2) set(x + dx, y + dy, r, g, b);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write plot: " + path);
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, std::uint32_t(w_));
    put_u32(ihdr, std::uint32_t(h_));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(out, "IHDR", ihdr);

    // raw scanlines with filter byte 0
    std::vector<std::uint8_t> raw;
    raw.reserve(std::size_t(h_) * (1 + std::size_t(w_) * 3));
    for (int y = 0; y < h_; ++y) {
      raw.push_back(0);
      const std::size_t at = std::size_t(y) * w_ * 3;
      raw.insert(raw.end(), px_.begin() + at, px_.begin() + at + std::size_t(w_) * 3);
    }

    std::vector<std::uint8_t> idat;
    idat.push_back(0x78);  // zlib header, no compression preset
    idat.push_back(0x01);
    std::size_t off = 0;
    while (off < raw.size()) {
      const std::size_t block = std::min<std::size_t>(65535, raw.size() - off);
      const bool last = off + block == raw.size();
      idat.push_back(last ? 1 : 0);  // stored block
      idat.push_back(std::uint8_t(block & 0xff));
      idat.push_back(std::uint8_t(block >> 8));
      idat.push_back(std::uint8_t(~block & 0xff));
      idat.push_back(std::uint8_t((~block >> 8) & 0xff));
      idat.insert(idat.end(), raw.begin() + off, raw.begin() + off + block);
      off += block;
    }
    put_u32(idat, adler32(raw));
    write_chunk(out, "IDAT", idat);
    write_chunk(out, "IEND", {});
    if (!out) throw IoError("short write while saving plot: " + path);
  }

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

// 3x5 bitmap font for tick labels and legends; rows are bit masks.
struct Glyph {
  char c;
  std::uint8_t rows[5];
};

const Glyph kFont[] = {
    {'0', {0b111, 0b101, 0b101, 0b101, 0b111}}, {'1', {0b010, 0b110, 0b010, 0b010, 0b111}},
    {'2', {0b111, 0b001, 0b111, 0b100, 0b111}}, {'3', {0b111, 0b001, 0b111, 0b001, 0b111}},
    {'4', {0b101, 0b101, 0b111, 0b001, 0b001}}, {'5', {0b111, 0b100, 0b111, 0b001, 0b111}},
    {'6', {0b111, 0b100, 0b111, 0b101, 0b111}}, {'7', {0b111, 0b001, 0b010, 0b010, 0b010}},
    {'8', {0b111, 0b101, 0b111, 0b101, 0b111}}, {'9', {0b111, 0b101, 0b111, 0b001, 0b111}},
    {'.', {0b000, 0b000, 0b000, 0b000, 0b010}}, {'-', {0b000, 0b000, 0b111, 0b000, 0b000}},
    {'_', {0b000, 0b000, 0b000, 0b000, 0b111}}, {' ', {0b000, 0b000, 0b000, 0b000, 0b000}},
    {'a', {0b000, 0b111, 0b011, 0b101, 0b111}}, {'b', {0b100, 0b111, 0b101, 0b101, 0b111}},
    {'c', {0b000, 0b111, 0b100, 0b100, 0b111}}, {'d', {0b001, 0b111, 0b101, 0b101, 0b111}},
    {'e', {0b000, 0b111, 0b111, 0b100, 0b111}}, {'f', {0b011, 0b010, 0b111, 0b010, 0b010}},
    {'g', {0b111, 0b101, 0b111, 0b001, 0b111}}, {'h', {0b100, 0b111, 0b101, 0b101, 0b101}},
    {'i', {0b010, 0b000, 0b010, 0b010, 0b010}}, {'j', {0b001, 0b000, 0b001, 0b101, 0b111}},
    {'k', {0b100, 0b101, 0b110, 0b110, 0b101}}, {'l', {0b010, 0b010, 0b010, 0b010, 0b011}},
    {'m', {0b000, 0b111, 0b111, 0b101, 0b101}}, {'n', {0b000, 0b110, 0b101, 0b101, 0b101}},
    {'o', {0b000, 0b111, 0b101, 0b101, 0b111}}, {'p', {0b000, 0b111, 0b101, 0b111, 0b100}},
    {'q', {0b000, 0b111, 0b101, 0b111, 0b001}}, {'r', {0b000, 0b111, 0b100, 0b100, 0b100}},
    {'s', {0b000, 0b011, 0b111, 0b001, 0b110}}, {'t', {0b010, 0b111, 0b010, 0b010, 0b011}},
    {'u', {0b000, 0b101, 0b101, 0b101, 0b111}}, {'v', {0b000, 0b101, 0b101, 0b101, 0b010}},
    {'w', {0b000, 0b101, 0b101, 0b111, 0b111}}, {'x', {0b000, 0b101, 0b010, 0b010, 0b101}},
    {'y', {0b000, 0b101, 0b111, 0b001, 0b111}}, {'z', {0b000, 0b111, 0b011, 0b110, 0b111}},
};

void draw_text(Canvas& canvas, int x, int y, const std::string& text, std::uint8_t r = 40,
               std::uint8_t g = 40, std::uint8_t b = 40) {
  for (char ch : text) {
    const char lc = char(std::tolower(static_cast<unsigned char>(ch)));
    for (const auto& glyph : kFont)
      if (glyph.c == lc) {
        for (int row = 0; row < 5; ++row)
          for (int col = 0; col < 3; ++col)
            if (glyph.rows[row] & (0b100 >> col)) canvas.set(x + col, y + row, r, g, b);
        break;
      }
    x += 4;
  }
}

std::string format_tick(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace

void write_line_chart(const std::string& path, const std::vector<double>& x,
                      const std::vector<Series>& series, const std::string& x_label, int width,
                      int height) {
  if (x.empty() || series.empty()) throw ContractError("write_line_chart: nothing to draw");
  for (const auto& s : series)
    if (s.y.size() != x.size())
      throw ContractError("write_line_chart: series '" + s.name + "' length mismatch");

  const int left = 56, right = 16, top = 16, bottom = 36;
  Canvas canvas(width, height);

  double x_min = x[0], x_max = x[0], y_min = series[0].y[0], y_max = series[0].y[0];
  for (double v : x) {
    x_min = std::min(x_min, v);
    x_max = std::max(x_max, v);
  }
  for (const auto& s : series)
    for (double v : s.y) {
      y_min = std::min(y_min, v);
      y_max = std::max(y_max, v);
    }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;
  const double y_pad = 0.06 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  const int plot_w = width - left - right, plot_h = height - top - bottom;
  auto to_px = [&](double vx) { return left + int(std::lround((vx - x_min) / (x_max - x_min) * plot_w)); };
  auto to_py = [&](double vy) {
    return top + plot_h - int(std::lround((vy - y_min) / (y_max - y_min) * plot_h));
  };

  canvas.line(left, top, left, top + plot_h, 0, 0, 0);
  canvas.line(left, top + plot_h, left + plot_w, top + plot_h, 0, 0, 0);

  for (double vx : x) {
    const int px = to_px(vx);
    canvas.line(px, top + plot_h, px, top + plot_h + 4, 0, 0, 0);
    draw_text(canvas, px - 8, top + plot_h + 8, format_tick(vx));
  }
  for (int i = 0; i <= 4; ++i) {
    const double vy = y_min + (y_max - y_min) * i / 4.0;
    const int py = to_py(vy);
    canvas.line(left - 4, py, left, py, 0, 0, 0);
    draw_text(canvas, 8, py - 2, format_tick(vy));
  }
  draw_text(canvas, left + plot_w / 2 - int(2 * x_label.size()), height - 10, x_label);

  const std::uint8_t palette[][3] = {
      {31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {148, 103, 189},
      {255, 127, 14}, {140, 86, 75}, {23, 190, 207},
  };
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto* color = palette[si % (sizeof(palette) / sizeof(palette[0]))];
    for (std::size_t i = 0; i + 1 < x.size(); ++i)
      canvas.line(to_px(x[i]), to_py(series[si].y[i]), to_px(x[i + 1]),
                  to_py(series[si].y[i + 1]), color[0], color[1], color[2]);
    for (std::size_t i = 0; i < x.size(); ++i)
      canvas.marker(to_px(x[i]), to_py(series[si].y[i]), color[0], color[1], color[2]);
    const int ly = top + 6 + int(si) * 10;
    canvas.line(left + 8, ly + 2, left + 20, ly + 2, color[0], color[1], color[2]);
    draw_text(canvas, left + 24, ly, series[si].name);
  }
  canvas.save(path);
}

}  // namespace mrg
