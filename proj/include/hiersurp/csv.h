#ifndef HIERSURP_CSV_H_
#define HIERSURP_CSV_H_

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace hiersurp {

// Minimal RFC 4180 reader: comma separated, double-quoted fields may hold
// commas, quotes ("") and newlines. The first record is the header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // -1 when absent.
  int column(std::string_view name) const;
  // Throws DataError when absent.
  int require(std::string_view name) const;
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

std::string csv_escape(std::string_view field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace hiersurp

#endif  // HIERSURP_CSV_H_
