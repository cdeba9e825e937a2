#pragma once

// PLY reader/writer for triangle meshes. Reads ASCII and
// binary_little_endian files with arbitrary extra elements/properties;
// writes the BOP model layout: vertex x,y,z (+ nx,ny,nz) and
// face "uchar count + int indices".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "posekit/core.hpp"
#include "posekit/geometry.hpp"

namespace posekit {

namespace ply_detail {

enum class Scalar { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline Scalar parse_scalar(const std::string& name, const std::string& context) {
    if (name == "char" || name == "int8") return Scalar::Int8;
    if (name == "uchar" || name == "uint8") return Scalar::UInt8;
    if (name == "short" || name == "int16") return Scalar::Int16;
    if (name == "ushort" || name == "uint16") return Scalar::UInt16;
    if (name == "int" || name == "int32") return Scalar::Int32;
    if (name == "uint" || name == "uint32") return Scalar::UInt32;
    if (name == "float" || name == "float32") return Scalar::Float32;
    if (name == "double" || name == "float64") return Scalar::Float64;
    throw ParseError("PLY header: unknown scalar type '" + name + "' in " + context);
}

inline std::size_t scalar_size(Scalar s) {
    switch (s) {
        case Scalar::Int8:
        case Scalar::UInt8: return 1;
        case Scalar::Int16:
        case Scalar::UInt16: return 2;
        case Scalar::Int32:
        case Scalar::UInt32:
        case Scalar::Float32: return 4;
        case Scalar::Float64: return 8;
    }
    return 0;
}

struct Property {
    std::string name;
    Scalar type = Scalar::Float32;
    bool is_list = false;
    Scalar count_type = Scalar::UInt8;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
};

enum class Format { Ascii, BinaryLittleEndian };

struct Header {
    Format format = Format::Ascii;
    std::vector<Element> elements;
};

inline Header parse_header(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply")
        throw ParseError("PLY header: missing 'ply' magic");
    Header h;
    bool have_format = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key.empty() || key == "comment" || key == "obj_info") continue;
        if (key == "end_header") {
            if (!have_format) throw ParseError("PLY header: missing format line");
            return h;
        }
        if (key == "format") {
            std::string fmt, version;
            ls >> fmt >> version;
            if (fmt == "ascii")
                h.format = Format::Ascii;
            else if (fmt == "binary_little_endian")
                h.format = Format::BinaryLittleEndian;
            else
                throw ParseError("PLY header: unsupported format '" + fmt + "'");
            have_format = true;
        } else if (key == "element") {
            Element e;
            long long count = -1;
            ls >> e.name >> count;
            if (e.name.empty() || count < 0 || ls.fail())
                throw ParseError("PLY header: malformed element line '" + line + "'");
            e.count = static_cast<std::size_t>(count);
            h.elements.push_back(std::move(e));
        } else if (key == "property") {
            if (h.elements.empty())
                throw ParseError("PLY header: property before any element: '" + line + "'");
            auto& e = h.elements.back();
            Property p;
            std::string type;
            ls >> type;
            if (type == "list") {
                std::string count_type, item_type;
                ls >> count_type >> item_type >> p.name;
                p.is_list = true;
                p.count_type = parse_scalar(count_type, "element '" + e.name + "'");
                p.type = parse_scalar(item_type, "element '" + e.name + "'");
            } else {
                ls >> p.name;
                p.type = parse_scalar(type, "element '" + e.name + "'");
            }
            if (p.name.empty())
                throw ParseError("PLY header: property without name in element '" + e.name + "'");
            e.properties.push_back(p);
        } else {
            throw ParseError("PLY header: unexpected line '" + line + "'");
        }
    }
    throw ParseError("PLY header: missing end_header");
}

/// Reads scalar values of one element instance, ASCII or binary.
class ValueReader {
public:
    ValueReader(std::istream& in, Format format) : in_(in), format_(format) {}

    double read(Scalar type, const std::string& what) {
        if (format_ == Format::Ascii) {
            std::string tok;
            if (!(in_ >> tok)) throw ParseError("PLY data: unexpected end of file reading " + what);
            try {
                std::size_t used = 0;
                const double v = std::stod(tok, &used);
                if (used != tok.size()) throw std::invalid_argument(tok);
                return v;
            } catch (const std::exception&) {
                throw ParseError("PLY data: bad number '" + tok + "' reading " + what);
            }
        }
        unsigned char buf[8];
        const std::size_t n = scalar_size(type);
        if (!in_.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n)))
            throw ParseError("PLY data: unexpected end of file reading " + what);
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + n);
        switch (type) {
            case Scalar::Int8: return static_cast<double>(static_cast<std::int8_t>(buf[0]));
            case Scalar::UInt8: return static_cast<double>(buf[0]);
            case Scalar::Int16: return load<std::int16_t>(buf);
            case Scalar::UInt16: return load<std::uint16_t>(buf);
            case Scalar::Int32: return load<std::int32_t>(buf);
            case Scalar::UInt32: return load<std::uint32_t>(buf);
            case Scalar::Float32: return load<float>(buf);
            case Scalar::Float64: return load<double>(buf);
        }
        return 0.0;
    }

private:
    template <typename T>
    static double load(const unsigned char* buf) {
        T v;
        std::memcpy(&v, buf, sizeof(T));
        return static_cast<double>(v);
    }
    std::istream& in_;
    Format format_;
};

inline void write_le(std::ostream& out, const void* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::big) {
        std::vector<char> tmp(static_cast<const char*>(data), static_cast<const char*>(data) + n);
        std::reverse(tmp.begin(), tmp.end());
        out.write(tmp.data(), static_cast<std::streamsize>(n));
    } else {
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    }
}

}  // namespace ply_detail

/// Parses a PLY mesh from a stream. Vertex order is preserved.
inline TriMesh read_ply(std::istream& in) {
    using namespace ply_detail;
    const Header h = parse_header(in);
    TriMesh mesh;
    bool seen_vertex = false, seen_face = false;
    ValueReader reader(in, h.format);

    for (const auto& e : h.elements) {
        if (e.name == "vertex") {
            seen_vertex = true;
            int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
            for (std::size_t i = 0; i < e.properties.size(); ++i) {
                const auto& n = e.properties[i].name;
                const int k = static_cast<int>(i);
                if (n == "x") ix = k;
                if (n == "y") iy = k;
                if (n == "z") iz = k;
                if (n == "nx") inx = k;
                if (n == "ny") iny = k;
                if (n == "nz") inz = k;
            }
            if (ix < 0 || iy < 0 || iz < 0)
                throw ParseError("PLY header: element 'vertex' lacks x/y/z properties");
            const bool normals = inx >= 0 && iny >= 0 && inz >= 0;
            mesh.vertices.resize(e.count);
            if (normals) mesh.vertex_normals.resize(e.count);
            std::vector<double> values(e.properties.size());
            for (std::size_t v = 0; v < e.count; ++v) {
                const std::string what = "vertex " + std::to_string(v);
                for (std::size_t i = 0; i < e.properties.size(); ++i) {
                    const auto& p = e.properties[i];
                    if (p.is_list) {
                        const auto n = static_cast<std::size_t>(reader.read(p.count_type, what));
                        for (std::size_t j = 0; j < n; ++j) reader.read(p.type, what);
                        values[i] = 0.0;
                    } else {
                        values[i] = reader.read(p.type, what);
                    }
                }
                mesh.vertices[v] = {values[ix], values[iy], values[iz]};
                if (!mesh.vertices[v].is_finite())
                    throw ParseError("PLY data: vertex " + std::to_string(v) + " is not finite");
                if (normals) mesh.vertex_normals[v] = {values[inx], values[iny], values[inz]};
            }
        } else if (e.name == "face") {
            seen_face = true;
            int list_index = -1;
            for (std::size_t i = 0; i < e.properties.size(); ++i)
                if (e.properties[i].is_list &&
                    (e.properties[i].name == "vertex_indices" ||
                     e.properties[i].name == "vertex_index"))
                    list_index = static_cast<int>(i);
            if (list_index < 0)
                throw ParseError("PLY header: element 'face' lacks a vertex_indices list");
            mesh.triangles.resize(e.count);
            for (std::size_t f = 0; f < e.count; ++f) {
                const std::string what = "face " + std::to_string(f);
                for (std::size_t i = 0; i < e.properties.size(); ++i) {
                    const auto& p = e.properties[i];
                    if (!p.is_list) {
                        reader.read(p.type, what);
                        continue;
                    }
                    const double n = reader.read(p.count_type, what);
                    if (static_cast<int>(i) != list_index) {
                        for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j)
                            reader.read(p.type, what);
                        continue;
                    }
                    if (n != 3.0)
                        throw ParseError("PLY data: face " + std::to_string(f) + " has " +
                                         std::to_string(static_cast<long long>(n)) +
                                         " vertices, only triangles are supported");
                    for (int j = 0; j < 3; ++j) {
                        const double idx = reader.read(p.type, what);
                        if (idx < 0 || idx >= static_cast<double>(mesh.vertices.size()) ||
                            idx != std::floor(idx))
                            throw ParseError("PLY data: face " + std::to_string(f) +
                                             " index " + std::to_string(static_cast<long long>(idx)) +
                                             " out of range (vertex count " +
                                             std::to_string(mesh.vertices.size()) + ")");
                        mesh.triangles[f][j] = static_cast<std::uint32_t>(idx);
                    }
                }
            }
        } else {
            // skip unknown element
            for (std::size_t k = 0; k < e.count; ++k) {
                const std::string what = "element '" + e.name + "' " + std::to_string(k);
                for (const auto& p : e.properties) {
                    if (p.is_list) {
                        const auto n = static_cast<std::size_t>(reader.read(p.count_type, what));
                        for (std::size_t j = 0; j < n; ++j) reader.read(p.type, what);
                    } else {
                        reader.read(p.type, what);
                    }
                }
            }
        }
        if (e.name == "face" && !seen_vertex)
            throw ParseError("PLY header: element 'face' precedes element 'vertex'");
    }
    if (!seen_vertex) throw ParseError("PLY header: no 'vertex' element");
    (void)seen_face;
    if (mesh.has_normals()) {
        // files carry float precision; renormalize so the TriMesh invariant holds
        for (auto& n : mesh.vertex_normals) {
            const double len = n.norm();
            n = len > 0.0 ? n / len : Vec3{0, 0, 1};
        }
    }
    return mesh;
}

inline TriMesh load_mesh(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mesh file '" + path.string() + "'");
    try {
        return read_ply(in);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

enum class PlyEncoding { Ascii, BinaryLittleEndian };

/// Writes a mesh. Coordinates are stored as float when every value is exactly
/// representable in single precision, otherwise as double, so a reload is
/// bit-identical either way.
inline void write_ply(std::ostream& out, const TriMesh& mesh,
                      PlyEncoding encoding = PlyEncoding::BinaryLittleEndian) {
    using ply_detail::write_le;
    bool float_exact = true;
    auto check = [&](double v) {
        if (static_cast<double>(static_cast<float>(v)) != v) float_exact = false;
    };
    for (const auto& v : mesh.vertices) check(v.x), check(v.y), check(v.z);
    for (const auto& n : mesh.vertex_normals) check(n.x), check(n.y), check(n.z);
    const char* type = float_exact ? "float" : "double";

    out << "ply\n"
        << "format " << (encoding == PlyEncoding::Ascii ? "ascii" : "binary_little_endian")
        << " 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property " << type << " x\nproperty " << type << " y\nproperty " << type << " z\n";
    if (mesh.has_normals())
        out << "property " << type << " nx\nproperty " << type << " ny\nproperty " << type
            << " nz\n";
    out << "element face " << mesh.triangles.size() << "\n"
        << "property list uchar int vertex_indices\n"
        << "end_header\n";

    auto put = [&](double v) {
        if (encoding == PlyEncoding::Ascii) {
            std::ostringstream s;
            s.precision(17);
            s << v;
            out << s.str();
        } else if (float_exact) {
            const float f = static_cast<float>(v);
            write_le(out, &f, 4);
        } else {
            write_le(out, &v, 8);
        }
    };
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& v = mesh.vertices[i];
        put(v.x);
        if (encoding == PlyEncoding::Ascii) out << ' ';
        put(v.y);
        if (encoding == PlyEncoding::Ascii) out << ' ';
        put(v.z);
        if (mesh.has_normals()) {
            const auto& n = mesh.vertex_normals[i];
            for (double c : {n.x, n.y, n.z}) {
                if (encoding == PlyEncoding::Ascii) out << ' ';
                put(c);
            }
        }
        if (encoding == PlyEncoding::Ascii) out << '\n';
    }
    for (const auto& t : mesh.triangles) {
        if (encoding == PlyEncoding::Ascii) {
            out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
        } else {
            const std::uint8_t n = 3;
            write_le(out, &n, 1);
            for (auto idx : t) {
                const auto i = static_cast<std::int32_t>(idx);
                write_le(out, &i, 4);
            }
        }
    }
}

inline void save_mesh(const std::filesystem::path& path, const TriMesh& mesh,
                      PlyEncoding encoding = PlyEncoding::BinaryLittleEndian) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write mesh file '" + path.string() + "'");
        write_ply(out, mesh, encoding);
        if (!out) throw Error("write failed for '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace posekit
